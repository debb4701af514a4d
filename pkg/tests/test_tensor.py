"""Tensor kernels: fills, elementwise ops, reductions, determinism."""

import numpy as np
import pytest

from stagenet import SeededRng, Tensor, elementwise, reduce, tensor_new
from stagenet.errors import ContractError, DomainError, ShapeError


class TestTensorNew:
    def test_zero_fill(self):
        t = tensor_new([1, 1, 2, 2], fill=0)
        assert t.data.tolist() == [[[[0.0, 0.0], [0.0, 0.0]]]]

    def test_ones_sum_is_element_count(self):
        t = tensor_new([2, 3, 4, 4], fill=1)
        assert float(t.data.sum()) == 96.0

    def test_seeded_fill_is_deterministic(self):
        a = tensor_new([1, 1, 1, 1], fill="uniform", rng=SeededRng(7))
        b = tensor_new([1, 1, 1, 1], fill="uniform", rng=SeededRng(7))
        assert a.data.tolist() == b.data.tolist()

    def test_zero_extent_rejected(self):
        with pytest.raises(ShapeError):
            tensor_new([2, 0, 3])

    def test_negative_extent_rejected(self):
        with pytest.raises(ShapeError):
            tensor_new([-1, 2])

    def test_rank_above_four_rejected(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros((1, 1, 1, 1, 1)))

    def test_random_fill_needs_rng(self):
        with pytest.raises(ContractError):
            tensor_new([2], fill="uniform")

    def test_buffers_are_read_only(self):
        t = tensor_new([2, 2], fill=1.0)
        with pytest.raises(ValueError):
            t.data[0, 0] = 5.0


class TestElementwise:
    def test_exp_of_zero_and_one(self):
        out = elementwise("exp", Tensor(np.array([0.0, 1.0])))
        np.testing.assert_allclose(out.data, [1.0, np.e], atol=1e-12)

    def test_add(self):
        out = elementwise("add", Tensor(np.array([1.0, 2.0])), Tensor(np.array([3.0, 4.0])))
        assert out.data.tolist() == [4.0, 6.0]

    def test_sqrt_exp_identity(self):
        # sqrt(exp(x)) == exp(x/2), checked numerically in 64-bit
        rng = SeededRng(11)
        x = Tensor(rng.uniform(-10.0, 10.0, (1000,)))
        lhs = elementwise("sqrt", elementwise("exp", x))
        rhs = elementwise("exp", elementwise("mul", x, 0.5))
        rel = np.abs(lhs.data - rhs.data) / np.abs(rhs.data)
        assert rel.max() < 1e-12

    def test_scalar_and_batch_broadcast(self):
        a = Tensor(np.ones((2, 3, 2, 2)))
        out = elementwise("mul", a, 2.0)
        assert float(out.data.sum()) == 48.0
        b = Tensor(np.full((1, 3, 2, 2), 3.0))
        out = elementwise("add", a, b)
        assert out.shape == (2, 3, 2, 2)
        assert float(out.data.max()) == 4.0

    def test_incompatible_shape_rejected(self):
        with pytest.raises(ShapeError):
            elementwise("add", Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))

    def test_ln_of_negative_rejected(self):
        with pytest.raises(DomainError):
            elementwise("ln", Tensor(np.array([1.0, -1.0])))

    def test_sqrt_of_negative_rejected(self):
        with pytest.raises(DomainError):
            elementwise("sqrt", Tensor(np.array([-4.0])))

    def test_sub_mul_max(self):
        a = Tensor(np.array([5.0, 2.0]))
        b = Tensor(np.array([3.0, 7.0]))
        assert elementwise("sub", a, b).data.tolist() == [2.0, -5.0]
        assert elementwise("mul", a, b).data.tolist() == [15.0, 14.0]
        assert elementwise("max", a, b).data.tolist() == [5.0, 7.0]


class TestReduce:
    def test_sum(self):
        out = reduce("sum", Tensor(np.array([1.0, 2.0, 3.0, 4.0])), [0])
        assert out.item() == 10.0

    def test_argmax(self):
        out = reduce("argmax", Tensor(np.array([0.1, 0.9, 0.3])), [0])
        assert int(out.data[0]) == 1

    def test_argmax_tie_lowest_index(self):
        out = reduce("argmax", Tensor(np.array([0.5, 0.9, 0.9])), [0])
        assert int(out.data[0]) == 1

    def test_spatial_max_matches_brute_force(self):
        rng = SeededRng(3)
        x = rng.uniform(-5.0, 5.0, (1, 2, 3, 3))
        out = reduce("max", Tensor(x), [2, 3])
        # brute force: walk every element per channel
        for c in range(2):
            best = -np.inf
            for i in range(3):
                for j in range(3):
                    best = max(best, x[0, c, i, j])
            assert out.data[0, c] == best

    def test_empty_axis_set_rejected(self):
        with pytest.raises(ContractError):
            reduce("sum", Tensor(np.ones((2, 2))), [])

    def test_invalid_axis_rejected(self):
        with pytest.raises(ShapeError):
            reduce("sum", Tensor(np.ones((2, 2))), [5])

    def test_shape_algebra(self):
        rng = SeededRng(5)
        x = Tensor(rng.uniform(0, 1, (2, 3, 4, 5)))
        for axes in ([0], [1, 3], [0, 1, 2, 3]):
            out = reduce("sum", x, axes)
            reduced = int(np.prod([x.shape[a] for a in axes]))
            assert max(out.size, 1) * reduced == x.size


class TestDeterminism:
    def _run_sequence(self, seed):
        rng = SeededRng(seed)
        a = tensor_new([2, 3, 4, 4], fill="uniform", rng=rng, low=-1, high=1)
        b = tensor_new([2, 3, 4, 4], fill="normal", rng=rng, low=0, high=1)
        c = elementwise("mul", a, b)
        d = elementwise("exp", elementwise("max", c, 0.0))
        return reduce("sum", d, [0, 1, 2, 3]).data.tobytes()

    def test_bit_reproducible_sequences(self):
        assert self._run_sequence(42) == self._run_sequence(42)
        assert self._run_sequence(42) != self._run_sequence(43)

    def test_split_streams_are_independent_and_stable(self):
        r = SeededRng(9)
        s1 = r.split(1).uniform(0, 1, (4,))
        s2 = r.split(2).uniform(0, 1, (4,))
        assert not np.allclose(s1, s2)
        np.testing.assert_array_equal(s1, SeededRng(9).split(1).uniform(0, 1, (4,)))


class TestPrecisionModes:
    def test_f32_agrees_with_f64_on_short_compositions(self):
        # random compositions of <= 5 ops, inputs in [-10, 10]
        for seed in range(20):
            rng = SeededRng(seed)
            ops = ["add", "sub", "mul", "max", "exp"]
            x64 = rng.uniform(-10, 10, (2, 3, 4, 4), dtype=np.float64)
            x32 = x64.astype(np.float32)
            op_rng = SeededRng(seed, 77)
            for _ in range(5):
                op = ops[int(op_rng.integers(0, len(ops)))]
                if op == "exp":
                    # keep exp arguments small so both precisions stay finite
                    x64 = elementwise("mul", Tensor(x64), 0.05).data
                    x32 = elementwise("mul", Tensor(x32), np.float32(0.05)).data
                    x64 = elementwise("exp", Tensor(x64)).data
                    x32 = elementwise("exp", Tensor(x32)).data
                else:
                    y = op_rng.uniform(-1, 1, ())
                    x64 = elementwise(op, Tensor(x64), float(y)).data
                    x32 = elementwise(op, Tensor(x32), float(y)).data
            denom = np.maximum(np.abs(x64), 1e-6)
            assert np.max(np.abs(x64 - x32.astype(np.float64)) / denom) < 1e-4
