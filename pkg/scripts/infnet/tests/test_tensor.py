from __future__ import annotations

import math
import sys
import unittest
from pathlib import Path

import numpy as np

SCRIPTS = Path(__file__).resolve().parents[2]
if str(SCRIPTS) not in sys.path:
    sys.path.insert(0, str(SCRIPTS))

from infnet import tensor as T
from infnet.errors import NonDeterministicFunctionError, ShapeError
from infnet.gradcheck import grad_check
from infnet.tensor import Tensor, backward


def leaf(data, name: str = "") -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


class TestMatmul(unittest.TestCase):
    def test_identity(self):
        out = T.matmul(Tensor(np.eye(2)), Tensor([[1, 2], [3, 4]]))
        np.testing.assert_array_equal(out.data, [[1, 2], [3, 4]])

    def test_dot_product(self):
        out = T.matmul(Tensor([[1, 2]]), Tensor([[3], [4]]))
        np.testing.assert_array_equal(out.data, [[11]])

    def test_shape_mismatch_names_both_shapes(self):
        with self.assertRaises(ShapeError) as ctx:
            T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))
        self.assertIn("(2, 3)", str(ctx.exception))

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(0)
        a, b = leaf(rng.standard_normal((3, 4))), leaf(rng.standard_normal((4, 2)))
        self.assertTrue(grad_check(T.matmul, [a, b], 1e-4, 1e-5).passed)

    def test_batched_parameter_gradient_is_summed_over_batch(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.standard_normal((5, 2, 3)))
        w = leaf(rng.standard_normal((3, 4)))
        backward(T.sum_all(T.matmul(x, w)))
        expected = sum(x.data[i].T @ np.ones((2, 4)) for i in range(5))
        np.testing.assert_allclose(w.grad, expected, atol=1e-12)


class TestSoftmax(unittest.TestCase):
    def test_uniform_row(self):
        out = T.softmax_rows(Tensor(np.zeros((1, 4))))
        np.testing.assert_allclose(out.data, [[0.25] * 4])

    def test_analytic_pair(self):
        out = T.softmax_rows(Tensor([[math.log(1.0), math.log(3.0)]]))
        np.testing.assert_allclose(out.data, [[0.25, 0.75]], atol=1e-15)

    def test_rows_sum_to_one_and_stay_in_unit_interval(self):
        rng = np.random.default_rng(2)
        out = T.softmax_rows(Tensor(rng.standard_normal((6, 9)) * 30)).data
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-9)
        self.assertTrue(((out >= 0) & (out <= 1)).all())

    def test_masked_columns_get_exact_zero(self):
        mask = np.array([[True, False, True], [False, False, False]])
        out = T.softmax_rows(Tensor(np.ones((2, 3))), mask).data
        self.assertEqual(out[0, 1], 0.0)
        np.testing.assert_allclose(out[0], [0.5, 0.0, 0.5])
        np.testing.assert_array_equal(out[1], [0.0, 0.0, 0.0])

    def test_gradients(self):
        x = leaf(np.random.default_rng(3).standard_normal((2, 5)))
        self.assertTrue(grad_check(T.softmax_rows, [x], 1e-4, 1e-5).passed)


class TestSigmoid(unittest.TestCase):
    def test_values(self):
        out = T.sigmoid(Tensor([0.0, math.log(3.0)])).data
        self.assertEqual(out[0], 0.5)
        self.assertAlmostEqual(out[1], 0.75, places=15)

    def test_strictly_inside_unit_interval_for_extremes(self):
        out = T.sigmoid(Tensor([-1e3, -40.0, 40.0, 1e3])).data
        self.assertTrue(np.isfinite(out).all())
        self.assertTrue(((out > 0) & (out < 1)).all())

    def test_gradient_tolerance(self):
        x = leaf(np.random.default_rng(4).standard_normal((3, 3)))
        report = grad_check(T.sigmoid, [x], 1e-4, 1e-6)
        self.assertTrue(report.passed, report)


class TestElementwiseAndLayout(unittest.TestCase):
    def test_add(self):
        np.testing.assert_array_equal(T.add(Tensor([1, 2]), Tensor([3, 4])).data, [4, 6])

    def test_mul_by_ones(self):
        x = Tensor([[1.5, -2.0]])
        np.testing.assert_array_equal(T.mul(x, Tensor(np.ones((1, 2)))).data, x.data)

    def test_relu(self):
        np.testing.assert_array_equal(T.relu(Tensor([-1.0, 2.0])).data, [0.0, 2.0])

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeError):
            T.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))
        with self.assertRaises(ShapeError):
            T.mul(Tensor(np.zeros(3)), Tensor(np.zeros(2)))

    def test_flatten_row_major(self):
        x = Tensor(np.arange(6.0).reshape(2, 3))
        np.testing.assert_array_equal(T.flatten(x).data, np.arange(6.0))

    def test_concat_rows(self):
        out = T.concat_rows([Tensor(np.zeros((2, 4))), Tensor(np.ones((3, 4)))])
        self.assertEqual(out.shape, (5, 4))

    def test_reshape_round_trip(self):
        x = Tensor(np.arange(6.0))
        np.testing.assert_array_equal(T.flatten(T.reshape(x, (3, 2))).data, x.data)

    def test_reshape_count_mismatch(self):
        with self.assertRaises(ShapeError):
            T.reshape(Tensor(np.zeros(6)), (4, 2))

    def test_slice_rows_routes_gradient(self):
        x = leaf(np.ones((4, 2)))
        backward(T.sum_all(T.slice_rows(x, 1, 3)))
        np.testing.assert_array_equal(x.grad, [[0, 0], [1, 1], [1, 1], [0, 0]])

    def test_layout_gradients(self):
        rng = np.random.default_rng(5)
        x, y = leaf(rng.standard_normal((3, 4))), leaf(rng.standard_normal((2, 4)))
        f = lambda a, b: T.reshape(T.concat_rows([T.slice_rows(a, 0, 2), b]), (2, 8))
        self.assertTrue(grad_check(f, [x, y], 1e-4, 1e-5).passed)

    def test_row_broadcast_rejects_full_matrix(self):
        with self.assertRaises(ShapeError):
            T.mul_row(Tensor(np.zeros((3, 4))), Tensor(np.zeros((2, 4))))


class TestReductions(unittest.TestCase):
    def test_sum_rows(self):
        np.testing.assert_array_equal(T.sum_rows(Tensor([[1, 2], [3, 4]])).data, [[4, 6]])

    def test_mean(self):
        self.assertEqual(T.mean(Tensor([2.0, 4.0])).item(), 3.0)

    def test_mean_gradient_is_reciprocal_count(self):
        x = leaf(np.zeros((2, 5)))
        backward(T.mean(x))
        np.testing.assert_allclose(x.grad, np.full((2, 5), 0.1))

    def test_empty_input(self):
        with self.assertRaises(ShapeError):
            T.mean(Tensor(np.zeros((0,))))
        with self.assertRaises(ShapeError):
            T.sum_rows(Tensor(np.zeros((0, 3))))


class TestBackward(unittest.TestCase):
    def test_sum(self):
        x = leaf([1.0, 2.0, 3.0])
        backward(T.sum_all(x))
        np.testing.assert_array_equal(x.grad, [1, 1, 1])

    def test_square(self):
        x = leaf([1.0, 2.0])
        backward(T.sum_all(T.mul(x, x)))
        np.testing.assert_array_equal(x.grad, [2, 4])

    def test_repeated_backward_accumulates(self):
        x = leaf([1.0, 2.0])
        backward(T.sum_all(x))
        backward(T.sum_all(x))
        np.testing.assert_array_equal(x.grad, [2, 2])

    def test_two_consumers_sum_contributions(self):
        # f = sum(x * y + x) = sum(x*y) + sum(x): df/dx = y + 1
        x, y = leaf([1.0, -2.0, 3.0]), leaf([0.5, 4.0, -1.0])
        backward(T.sum_all(T.add(T.mul(x, y), x)))
        np.testing.assert_array_equal(x.grad, y.data + 1.0)
        np.testing.assert_array_equal(y.grad, x.data)

    def test_non_scalar_loss(self):
        with self.assertRaises(ShapeError):
            backward(leaf([1.0, 2.0]))

    def test_tape_is_topologically_ordered(self):
        x = leaf([1.0, 2.0])
        y = T.mul(x, x)
        z = T.sum_all(T.add(y, x))
        tape = T.Tape.record(z)
        position = {id(n): i for i, n in enumerate(tape.nodes)}
        for node in tape.nodes:
            for p in node._parents:
                self.assertLess(position[id(p)], position[id(node)])


class TestEmbedding(unittest.TestCase):
    def test_pad_index_gives_zero_row_and_no_gradient(self):
        table = leaf(np.arange(6.0).reshape(3, 2))
        out = T.embedding(table, np.array([2, -1, 2]))
        np.testing.assert_array_equal(out.data, [[4, 5], [0, 0], [4, 5]])
        backward(T.sum_all(out))
        np.testing.assert_array_equal(table.grad, [[0, 0], [0, 0], [2, 2]])

    def test_out_of_range(self):
        with self.assertRaises(ShapeError):
            T.embedding(Tensor(np.zeros((3, 2))), np.array([3]))


class TestGradCheck(unittest.TestCase):
    def test_softmax_of_matmul(self):
        rng = np.random.default_rng(6)
        a, b = leaf(rng.standard_normal((2, 3))), leaf(rng.standard_normal((3, 5)))
        report = grad_check(lambda x, y: T.softmax_rows(T.matmul(x, y)), [a, b], 1e-4, 1e-5)
        self.assertTrue(report.passed, report)
        self.assertEqual(report.n_checked, 6 + 15)

    def test_wrong_backward_rule_fails(self):
        def bad_square(x: Tensor) -> Tensor:
            # derivative should be 2x
            return Tensor.from_op(x.data ** 2, (x,), lambda g: (g * x.data,), "bad_square")

        x = leaf(np.random.default_rng(7).uniform(0.5, 2.0, size=(3,)))
        report = grad_check(bad_square, [x], 1e-4, 1e-5)
        self.assertFalse(report.passed)
        self.assertGreater(report.max_rel_error, 0.1)

    def test_wrong_backward_on_small_gradients_fails(self):
        def small_scale(x: Tensor) -> Tensor:
            # derivative should be 1e-6
            return Tensor.from_op(1e-6 * x.data, (x,), lambda g: (2e-6 * g,), "small_scale")

        x = leaf(np.random.default_rng(10).standard_normal(4))
        report = grad_check(small_scale, [x], 1e-4, 1e-5)
        self.assertFalse(report.passed, report)
        self.assertGreater(report.n_checked, 0)
        self.assertAlmostEqual(report.max_rel_error, 0.5, places=6)

    def test_correct_backward_on_small_gradients_passes(self):
        x = leaf(np.random.default_rng(11).standard_normal(4))
        report = grad_check(lambda t: T.scale(t, 1e-6), [x], 1e-4, 1e-5)
        self.assertTrue(report.passed, report)

    def test_nothing_checked_does_not_pass(self):
        x = leaf(-np.ones(3))
        report = grad_check(T.relu, [x], 1e-4, 1e-5)
        self.assertEqual(report.n_checked, 0)
        self.assertEqual(report.n_skipped, 3)
        self.assertFalse(report.passed)

    def test_non_deterministic_function_is_rejected(self):
        rng = np.random.default_rng(8)
        x = leaf(np.ones(3))
        with self.assertRaises(NonDeterministicFunctionError):
            grad_check(lambda t: T.mul(t, Tensor(rng.standard_normal(3))), [x])

    def test_every_op_over_ten_seeds(self):
        ops = {
            "relu": lambda x: T.relu(x),
            "scale": lambda x: T.scale(x, -1.7),
            "log": lambda x: T.log(T.add(T.mul(x, x), 1.0)),
            "sum_rows": T.sum_rows,
            "transpose": lambda x: T.matmul(T.transpose(x), x),
            "mul_row": lambda x: T.mul_row(x, T.slice_rows(x, 0, 1)),
            "broadcast": lambda x: T.broadcast_batch(x, (2,)),
        }
        for seed in range(10):
            rng = np.random.default_rng(100 + seed)
            for name, f in ops.items():
                x = leaf(rng.standard_normal((3, 4)))
                report = grad_check(f, [x], 1e-4, 1e-4, name=name, seed=seed)
                self.assertTrue(report.passed, f"seed {seed}: {report}")


class TestPurity(unittest.TestCase):
    def test_identical_inputs_give_identical_outputs(self):
        rng = np.random.default_rng(9)
        x = Tensor(rng.standard_normal((4, 6)))
        w = Tensor(rng.standard_normal((6, 6)))
        first = T.softmax_rows(T.matmul(x, w)).data
        second = T.softmax_rows(T.matmul(x, w)).data
        self.assertTrue(np.array_equal(first, second))


if __name__ == "__main__":
    unittest.main()
