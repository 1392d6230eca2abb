from __future__ import annotations

import math
import sys
import tempfile
import unittest
from dataclasses import replace
from pathlib import Path

import numpy as np

SCRIPTS = Path(__file__).resolve().parents[2]
if str(SCRIPTS) not in sys.path:
    sys.path.insert(0, str(SCRIPTS))

from infnet.config import SyntheticSpec, default_schema
from infnet.dataset import (
    check_compatible,
    format_example,
    format_header,
    load_examples,
    parse_example,
    parse_header,
    read_dataset,
    write_dataset,
)
from infnet.errors import DatasetParseError, SchemaViolationError, StorageError, SyntheticSpecError
from infnet.metrics import auc_arrays
from infnet.prepare import collate, iter_batches
from infnet.synthetic import base_rate, ceiling_auc, generate_synthetic, oracle_scores, random_examples
from infnet.types import Example, FeatureSchema

SCHEMA = FeatureSchema(cardinalities=(4, 5), max_lens=(3, 2), vocab_sizes=(6, 7), num_tasks=2)


class TestDatasetFiles(unittest.TestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def test_round_trip(self):
        examples = random_examples(SCHEMA, 25, seed=0, mask_rate=0.3)
        path = self.tmp / "train.txt"
        self.assertEqual(write_dataset(path, SCHEMA, examples), 25)
        schema, loaded = load_examples(path)
        self.assertEqual(schema.data_signature(), SCHEMA.data_signature())
        self.assertEqual(loaded, examples)

    def test_header_format(self):
        header = format_header(SCHEMA)
        self.assertEqual(header, "schema M=2 F=2 d_irrelevant cards=4,5 lens=3,2 vocabs=6,7 tasks=2")
        self.assertEqual(parse_header(header).data_signature(), SCHEMA.data_signature())

    def test_empty_sequence_line(self):
        ex = Example("u7", [2, 5], [[], [1, 7]], [1, 0], [True, False])
        line = format_example(ex)
        self.assertEqual(line, "user=u7|cat=2,5|seq1=|seq2=1,7|labels=1,0|mask=1,0")
        self.assertEqual(parse_example(line, SCHEMA, 2), ex)

    def test_index_outside_cardinality_names_line_and_field(self):
        path = self.tmp / "bad.txt"
        path.write_text(
            format_header(SCHEMA) + "\n"
            "user=a|cat=1,1|seq1=|seq2=|labels=0,0|mask=1,1\n"
            "user=b|cat=5,1|seq1=|seq2=|labels=0,0|mask=1,1\n",
            encoding="utf-8",
        )
        _, stream = read_dataset(path)
        with self.assertRaises(SchemaViolationError) as ctx:
            list(stream)
        self.assertIn("line 3", str(ctx.exception))
        self.assertIn("field 1", str(ctx.exception))

    def test_malformed_line(self):
        path = self.tmp / "bad.txt"
        path.write_text(format_header(SCHEMA) + "\nuser=a|cat=1,1|labels=0,0\n", encoding="utf-8")
        with self.assertRaises(DatasetParseError) as ctx:
            load_examples(path)
        self.assertEqual(ctx.exception.line_number, 2)

    def test_empty_body(self):
        path = self.tmp / "empty.txt"
        write_dataset(path, SCHEMA, [])
        schema, examples = load_examples(path)
        self.assertEqual(examples, [])
        self.assertEqual(schema.num_tasks, 2)

    def test_missing_header(self):
        path = self.tmp / "none.txt"
        path.write_text("", encoding="utf-8")
        with self.assertRaises(DatasetParseError):
            read_dataset(path)

    def test_missing_file(self):
        with self.assertRaises(StorageError):
            read_dataset(self.tmp / "absent.txt")

    def test_user_id_with_separator(self):
        with self.assertRaises(SchemaViolationError):
            format_example(Example("a|b", [1, 1], [[], []], [0, 0], [True, True]))

    def test_incompatible_header(self):
        other = replace(SCHEMA, cardinalities=(4, 6))
        with self.assertRaises(SchemaViolationError):
            check_compatible(other, SCHEMA, "train.txt")
        check_compatible(replace(SCHEMA, embed_dim=32), SCHEMA, "train.txt")


class TestBatching(unittest.TestCase):
    def test_collate_layout(self):
        ex = Example("u", [2, 5], [[1, 2, 3, 4], [7]], [1, 0], [True, False])
        batch = collate([ex], SCHEMA)
        np.testing.assert_array_equal(batch.cat_idx, [[1, 4]])
        np.testing.assert_array_equal(batch.seq_idx, [[1, 2, 3, 6, -1]])
        np.testing.assert_array_equal(batch.seq_mask, [[True, True, True, True, False]])
        np.testing.assert_array_equal(batch.label_mask, [[True, False]])

    def test_batches_cover_every_example_once(self):
        data = collate(random_examples(SCHEMA, 23, seed=1), SCHEMA)
        seen = []
        for b in iter_batches(data, 5, np.random.default_rng(0)):
            self.assertLessEqual(len(b), 5)
            seen.extend(b.user_ids)
        self.assertEqual(sorted(seen), sorted(data.user_ids))


class TestSynthetic(unittest.TestCase):
    def spec(self, **kw) -> SyntheticSpec:
        base = dict(schema=default_schema(), noise_rate=0.0, n_train=50, n_val=20, n_test=20)
        base.update(kw)
        return SyntheticSpec(**base)

    def test_noise_free_oracle_is_perfect(self):
        data = generate_synthetic(self.spec(n_test=2000), seed=1)
        test = data.splits["test"]
        scores = oracle_scores(data.rules, test, data.schema)
        labels = np.array([ex.labels for ex in test])
        for i in range(data.schema.num_tasks):
            self.assertEqual(auc_arrays(scores[:, i], labels[:, i]), 1.0)

    def test_noisy_oracle_reaches_ceiling(self):
        data = generate_synthetic(self.spec(noise_rate=0.1, n_test=10_000), seed=2)
        test = data.splits["test"]
        scores = oracle_scores(data.rules, test, data.schema)
        labels = np.array([ex.labels for ex in test])
        for i, ceiling in enumerate(data.ceilings()):
            self.assertAlmostEqual(auc_arrays(scores[:, i], labels[:, i]), ceiling, delta=0.01)

    def test_positive_rate_matches_base_rate(self):
        n = 10_000
        data = generate_synthetic(self.spec(n_test=n), seed=3)
        labels = np.array([ex.labels for ex in data.splits["test"]])
        for i, rule in enumerate(data.rules):
            pi = base_rate(rule, data.schema)
            sigma = math.sqrt(pi * (1 - pi) / n)
            self.assertLess(abs(labels[:, i].mean() - pi), 3 * sigma)

    def test_rules_use_distinct_pairs(self):
        data = generate_synthetic(self.spec(), seed=4)
        pairs = [(r.field, r.behavior) for r in data.rules]
        self.assertEqual(len(set(pairs)), len(pairs))

    def test_same_seed_same_bytes(self):
        with tempfile.TemporaryDirectory() as tmp:
            paths = []
            for k in range(2):
                data = generate_synthetic(self.spec(noise_rate=0.05), seed=7)
                path = Path(tmp) / f"train{k}.txt"
                write_dataset(path, data.schema, data.splits["train"])
                paths.append(path)
            self.assertEqual(paths[0].read_bytes(), paths[1].read_bytes())
        other = generate_synthetic(self.spec(noise_rate=0.05), seed=8)
        self.assertNotEqual(other.splits["train"], data.splits["train"])

    def test_masked_labels_are_stored_as_zero(self):
        data = generate_synthetic(self.spec(mask_rate=0.5), seed=5)
        for ex in data.splits["train"]:
            for y, seen in zip(ex.labels, ex.label_mask):
                if not seen:
                    self.assertEqual(y, 0)

    def test_too_few_field_behavior_pairs(self):
        schema = FeatureSchema(cardinalities=(5,), max_lens=(3,), vocab_sizes=(6,), num_tasks=2)
        with self.assertRaises(SyntheticSpecError):
            generate_synthetic(self.spec(schema=schema), seed=0)

    def test_invalid_noise_rate(self):
        with self.assertRaises(SyntheticSpecError):
            generate_synthetic(self.spec(noise_rate=0.5), seed=0)

    def test_default_run_ceilings_leave_room_above_learnability_bar(self):
        for seed in range(5):
            data = generate_synthetic(self.spec(noise_rate=0.05), seed=seed)
            manifest = data.manifest()
            for i, (pi, ceiling) in enumerate(zip(manifest["base_rates"], manifest["ceiling_auc"])):
                self.assertAlmostEqual(pi, 0.5, delta=0.05, msg=f"seed {seed} task {i + 1}")
                self.assertGreaterEqual(ceiling, 0.93, f"seed {seed} task {i + 1}: base rate {pi:.3f}")

    def test_rule_subsets_are_proper(self):
        schema = FeatureSchema(cardinalities=(2, 3), max_lens=(1, 4), vocab_sizes=(2, 9), num_tasks=4)
        data = generate_synthetic(self.spec(schema=schema), seed=0)
        for rule in data.rules:
            self.assertTrue(1 <= len(rule.categories) < schema.cardinalities[rule.field])
            self.assertTrue(1 <= len(rule.items) < schema.vocab_sizes[rule.behavior])

    def test_ceiling(self):
        self.assertEqual(ceiling_auc(0.3, 0.0), 1.0)
        self.assertLess(ceiling_auc(0.3, 0.1), 1.0)
        self.assertGreater(ceiling_auc(0.3, 0.1), 0.5)


if __name__ == "__main__":
    unittest.main()
