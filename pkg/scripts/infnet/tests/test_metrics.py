from __future__ import annotations

import math
import sys
import unittest
from pathlib import Path

import numpy as np

SCRIPTS = Path(__file__).resolve().parents[2]
if str(SCRIPTS) not in sys.path:
    sys.path.insert(0, str(SCRIPTS))

from infnet.config import TrainConfig
from infnet.errors import UndefinedMetricError
from infnet.evaluate import evaluate_model, logloss
from infnet.metrics import auc, auc_arrays, gauc, per_user_auc
from infnet.model import INFNetModel
from infnet.prepare import collate
from infnet.synthetic import random_examples
from infnet.types import FeatureSchema, ScoredLabel


def pairwise_auc(scores, labels) -> float:
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    credit = 0.0
    for p in pos:
        for n in neg:
            credit += 1.0 if p > n else 0.5 if p == n else 0.0
    return credit / (len(pos) * len(neg))


def items(scores, labels, users=None):
    users = users or ["u"] * len(scores)
    return [ScoredLabel(float(s), int(y), u) for s, y, u in zip(scores, labels, users)]


class TestAUC(unittest.TestCase):
    def test_perfect_ranking(self):
        self.assertEqual(auc(items([0.9, 0.8, 0.1], [1, 1, 0])), 1.0)

    def test_all_tied(self):
        self.assertEqual(auc(items([0.5, 0.5, 0.5, 0.5], [1, 0, 1, 0])), 0.5)

    def test_reversed_ranking(self):
        self.assertEqual(auc_arrays([0.1, 0.2, 0.9], [1, 1, 0]), 0.0)

    def test_single_class_is_undefined(self):
        with self.assertRaises(UndefinedMetricError):
            auc(items([0.1, 0.2], [1, 1]))

    def test_matches_pairwise_oracle(self):
        for trial in range(200):
            rng = np.random.default_rng(trial)
            n = int(rng.integers(2, 40))
            # coarse scores so ties occur
            scores = np.round(rng.random(n), 1)
            labels = rng.integers(0, 2, size=n)
            labels[0], labels[1] = 0, 1
            self.assertAlmostEqual(auc_arrays(scores, labels), pairwise_auc(scores, labels), delta=1e-12)

    def test_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(1)
        scores = rng.standard_normal(50)
        labels = rng.integers(0, 2, size=50)
        labels[:2] = [0, 1]
        base = auc_arrays(scores, labels)
        self.assertEqual(auc_arrays(np.exp(scores), labels), base)
        self.assertEqual(auc_arrays(3.0 * scores + 1.0, labels), base)

    def test_flipped_labels_complement(self):
        rng = np.random.default_rng(2)
        scores = rng.random(30)
        labels = rng.integers(0, 2, size=30)
        labels[:2] = [0, 1]
        self.assertAlmostEqual(auc_arrays(scores, 1 - labels), 1.0 - auc_arrays(scores, labels), delta=1e-12)

    def test_rejects_non_finite_scores(self):
        with self.assertRaises(ValueError):
            auc_arrays([0.1, math.nan], [0, 1])


class TestGAUC(unittest.TestCase):
    def test_single_user_equals_auc(self):
        rng = np.random.default_rng(3)
        scores = rng.random(20)
        labels = rng.integers(0, 2, size=20)
        labels[:2] = [0, 1]
        data = items(scores, labels)
        self.assertAlmostEqual(gauc(data), auc(data), delta=1e-15)

    def test_two_users(self):
        data = items(
            [0.9, 0.1, 0.4, 0.4],
            [1, 0, 1, 0],
            ["a", "a", "b", "b"],
        )
        self.assertAlmostEqual(gauc(data), 0.75, delta=1e-15)

    def test_single_class_users_are_skipped(self):
        data = items([0.9, 0.1, 0.3, 0.2], [1, 0, 1, 1], ["a", "a", "b", "b"])
        self.assertEqual(gauc(data), 1.0)
        self.assertEqual(list(per_user_auc(data)["user_id"]), ["a"])

    def test_no_eligible_user(self):
        with self.assertRaises(UndefinedMetricError):
            gauc(items([0.1, 0.2, 0.3], [1, 0, 1], ["a", "b", "c"]))

    def test_matches_per_user_oracle(self):
        for trial in range(200):
            rng = np.random.default_rng(400 + trial)
            n = int(rng.integers(2, 80))
            users = [f"u{int(k)}" for k in rng.integers(0, int(rng.integers(1, 13)), size=n)]
            # one user is guaranteed both classes
            users[1] = users[0]
            scores = np.round(rng.random(n), int(rng.integers(1, 3)))
            labels = (rng.random(n) < rng.uniform(0.1, 0.9)).astype(int)
            labels[0], labels[1] = 0, 1
            data = items(scores, labels, users)
            num = den = 0.0
            uniform = []
            for u in sorted(set(users)):
                idx = [i for i, v in enumerate(users) if v == u]
                ys = [labels[i] for i in idx]
                if len(set(ys)) < 2:
                    continue
                a = pairwise_auc([scores[i] for i in idx], ys)
                num += a * len(idx)
                den += len(idx)
                uniform.append(a)
            self.assertAlmostEqual(gauc(data), num / den, delta=1e-12, msg=f"trial {trial}")
            self.assertAlmostEqual(
                gauc(data, "uniform"), sum(uniform) / len(uniform), delta=1e-12, msg=f"trial {trial}"
            )

    def test_unknown_weighting(self):
        with self.assertRaises(ValueError):
            gauc(items([0.1, 0.9], [0, 1]), "median")


class TestEvaluateModel(unittest.TestCase):
    def setUp(self):
        self.schema = FeatureSchema(
            cardinalities=(4, 5), max_lens=(3,), vocab_sizes=(6,), num_tasks=2,
            embed_dim=4, num_cat_proxies=2, num_shared_task_tokens=1,
        )
        self.model = INFNetModel(self.schema, TrainConfig(n_blocks=1))

    def test_metrics_and_logloss(self):
        data = collate(random_examples(self.schema, 40, seed=0, n_users=4), self.schema)
        out = evaluate_model(self.model, data, batch_size=7)
        probs = self.model.predict_proba(data)
        self.assertEqual(out["n_examples"], 40)
        for i in range(2):
            self.assertAlmostEqual(out["auc"][i], pairwise_auc(probs[:, i], data.labels[:, i]), delta=1e-12)
        expected = logloss(probs, data.labels, data.label_mask, np.ones(2))
        self.assertAlmostEqual(out["logloss"], expected, delta=1e-12)
        self.assertAlmostEqual(out["mean_auc"], float(np.mean(out["auc"])), delta=1e-15)

    def test_single_class_task_reports_nan(self):
        examples = random_examples(self.schema, 10, seed=1)
        for ex in examples:
            ex.labels[1] = 1
        examples[0].labels[0], examples[1].labels[0] = 0, 1
        out = evaluate_model(self.model, collate(examples, self.schema))
        self.assertTrue(math.isnan(out["auc"][1]))
        self.assertFalse(math.isnan(out["mean_auc"]))


if __name__ == "__main__":
    unittest.main()
