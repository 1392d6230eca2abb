"""End-to-end checks on planted synthetic data.

The training experiments take tens of minutes; set INFNET_SLOW=1 to run them.
"""
from __future__ import annotations

import os
import sys
import time
import unittest
from dataclasses import replace
from pathlib import Path

import numpy as np

SCRIPTS = Path(__file__).resolve().parents[2]
if str(SCRIPTS) not in sys.path:
    sys.path.insert(0, str(SCRIPTS))

from infnet.config import ABLATIONS, SyntheticSpec, TrainConfig, default_schema
from infnet.evaluate import evaluate_model
from infnet.gradcheck import format_report, grad_check_suite
from infnet.prepare import collate
from infnet.synthetic import generate_synthetic
from infnet.trainer import model_from_checkpoint, train

SLOW = os.environ.get("INFNET_SLOW") == "1"


class TestGradientSuite(unittest.TestCase):
    def test_suite_passes_quickly(self):
        start = time.perf_counter()
        reports = grad_check_suite(1e-4, 1e-4, seed=0)
        elapsed = time.perf_counter() - start
        failed = [r for r in reports if not r.passed]
        self.assertEqual(failed, [], format_report(reports))
        names = {r.name for r in reports}
        self.assertTrue(any("model" in n for n in names), sorted(names))
        self.assertLess(elapsed, 60.0)


@unittest.skipUnless(SLOW, "set INFNET_SLOW=1 for training experiments")
class TestPlantedData(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.schema = default_schema()
        data = generate_synthetic(SyntheticSpec(schema=cls.schema, noise_rate=0.05), seed=0)
        cls.train_data = collate(data.splits["train"], cls.schema)
        cls.val_data = collate(data.splits["val"], cls.schema)
        cls.test_data = collate(data.splits["test"], cls.schema)
        cls.ceilings = data.ceilings()
        cls.config = TrainConfig(batch_size=256, n_blocks=2, max_epochs=30, patience=5, seed=1)

    def run_auc(self, config: TrainConfig):
        result = train(config, self.schema, self.train_data, self.val_data)
        model = model_from_checkpoint(result.best)
        return np.asarray(evaluate_model(model, self.test_data)["auc"])

    def test_full_model_learns_every_task(self):
        aucs = self.run_auc(self.config)
        for i, (a, ceiling) in enumerate(zip(aucs, self.ceilings)):
            self.assertGreaterEqual(a, 0.92, f"task {i + 1}: AUC {a:.4f}, ceiling {ceiling:.4f}")

    def test_ablations_do_not_beat_full_model(self):
        per_mode = {}
        for mode in ABLATIONS:
            runs = [self.run_auc(replace(self.config, seed=seed, ablation=mode)) for seed in (1, 2, 3)]
            per_mode[mode] = np.mean(runs, axis=0)
        table = "; ".join(
            f"{mode} " + " ".join(f"{a:.5f}" for a in aucs) + f" mean {aucs.mean():.5f}"
            for mode, aucs in per_mode.items()
        )
        full = per_mode["full"]
        for mode in ABLATIONS[1:]:
            self.assertGreaterEqual(full.mean(), per_mode[mode].mean(), f"{mode}: {table}")
        self.assertGreaterEqual(float((full - per_mode["no_task_tokens"]).max()), 0.005, table)


@unittest.skipUnless(SLOW, "set INFNET_SLOW=1 for training experiments")
class TestLossDecrease(unittest.TestCase):
    def test_first_ten_evaluations(self):
        schema = default_schema()
        data = generate_synthetic(SyntheticSpec(schema=schema, noise_rate=0.0, n_train=2000, n_val=500, n_test=0), seed=3)
        config = TrainConfig(batch_size=256, n_blocks=2, max_epochs=10, patience=10, seed=3)
        result = train(config, schema, collate(data.splits["train"], schema), collate(data.splits["val"], schema))
        losses = [h["loss"] for h in result.history]
        self.assertEqual(len(losses), 10)
        for before, after in zip(losses, losses[1:]):
            self.assertLess(after, before)


if __name__ == "__main__":
    unittest.main()
