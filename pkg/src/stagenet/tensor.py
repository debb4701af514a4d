"""Dense tensors, seeded random streams, and deterministic array kernels.

Axis order is fixed as [batch, channel, height, width]; tensors of lower
rank use the leading extents (a rank-2 tensor is [batch, channel]).
Results returned by the kernels in this module are immutable: their
buffers are marked read-only so they can be shared freely across threads.
"""

from __future__ import annotations

from typing import Iterable, Sequence, Union

import numpy as np

from .errors import ContractError, DomainError, ShapeError

DTYPES = {"float32": np.float32, "float64": np.float64}

MAX_RANK = 4

_UNARY_OPS = ("exp", "ln", "sqrt")
_BINARY_OPS = ("add", "sub", "mul", "max")
_REDUCE_OPS = ("sum", "max", "argmax")


class SeededRng:
    """Counter-based random stream that is reproducible across platforms.

    Wraps numpy's Philox bit generator keyed by ``(seed, stream)``.  The
    same key always yields the same draw sequence, and ``split`` derives
    statistically independent streams, so parallel workers can each own
    a stream derived from (seed, worker index) without coordination.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        self._gen = np.random.Generator(
            np.random.Philox(key=[self.seed & 0xFFFFFFFFFFFFFFFF, self.stream & 0xFFFFFFFFFFFFFFFF])
        )

    def split(self, stream: int) -> "SeededRng":
        """Independent stream for the same seed, e.g. one per epoch or sample."""
        return SeededRng(self.seed, stream)

    def uniform(self, low: float, high: float, shape=None, dtype=np.float64) -> np.ndarray:
        out = self._gen.uniform(low, high, size=shape)
        return np.asarray(out, dtype=dtype)

    def normal(self, mean: float, std: float, shape=None, dtype=np.float64) -> np.ndarray:
        out = self._gen.normal(mean, std, size=shape)
        return np.asarray(out, dtype=dtype)

    def integers(self, low: int, high: int, shape=None) -> np.ndarray:
        return self._gen.integers(low, high, size=shape)

    def random(self) -> float:
        return float(self._gen.random())

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


def _check_extents(shape: Sequence[int]) -> tuple:
    shape = tuple(int(e) for e in shape)
    if not 1 <= len(shape) <= MAX_RANK:
        raise ShapeError(f"rank must be 1..{MAX_RANK}, got shape {shape}")
    if any(e < 1 for e in shape):
        raise ShapeError(f"all extents must be >= 1, got shape {shape}")
    return shape


class Tensor:
    """Immutable dense array in [batch, channel, height, width] order.

    ``data`` is stored row-major (channel-major within batch) and marked
    read-only; build a new Tensor instead of mutating.  Use ``float32``
    for training and ``float64`` when checking gradients.
    """

    __slots__ = ("data",)

    def __init__(self, data: np.ndarray):
        arr = np.ascontiguousarray(data)
        _check_extents(arr.shape)
        arr.flags.writeable = False
        self.data = arr

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype))

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(-1)[0])

    def tolist(self):
        return self.data.tolist()

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name})"


TensorLike = Union[Tensor, np.ndarray]


def as_array(x: TensorLike) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def tensor_new(shape: Sequence[int], fill: Union[float, str] = 0.0,
               rng: SeededRng | None = None, dtype="float32",
               low: float = 0.0, high: float = 1.0) -> Tensor:
    """Create a tensor filled with a scalar or with seeded random draws.

    ``fill`` is either a number or one of ``"uniform"``/``"normal"``; the
    random fills require ``rng`` and are deterministic for a given stream.
    """
    shape = _check_extents(shape)
    dt = DTYPES[dtype] if isinstance(dtype, str) else np.dtype(dtype)
    if isinstance(fill, str):
        if rng is None:
            raise ContractError(f"fill={fill!r} requires an rng")
        if fill == "uniform":
            data = rng.uniform(low, high, shape, dtype=dt)
        elif fill == "normal":
            data = rng.normal(low, high, shape, dtype=dt)
        else:
            raise ContractError(f"unknown random fill {fill!r}")
    else:
        data = np.full(shape, float(fill), dtype=dt)
    return Tensor(data)


def _binary_operand(a: np.ndarray, b) -> np.ndarray | float:
    if np.isscalar(b) or isinstance(b, (int, float)):
        return float(b)
    arr = as_array(b)
    if arr.shape == a.shape:
        return arr
    # scalar-size tensors and batch-broadcast (leading extent 1) are the
    # only broadcast forms supported; anything else is a shape error.
    if arr.size == 1:
        return float(arr.reshape(-1)[0])
    if arr.ndim == a.ndim and arr.shape[0] == 1 and arr.shape[1:] == a.shape[1:]:
        return arr
    raise ShapeError(f"operand shape {arr.shape} incompatible with {a.shape}")


def elementwise(op: str, a: TensorLike, b=None) -> Tensor:
    """Elementwise kernel: add/sub/mul/max (binary) or exp/ln/sqrt (unary).

    Binary ops accept a tensor of equal shape, a scalar, or a tensor
    broadcastable along the batch extent only.
    """
    x = as_array(a)
    if op in _UNARY_OPS:
        if b is not None:
            raise ContractError(f"{op} is unary")
        if op == "exp":
            out = np.exp(x)
        elif op == "ln":
            if np.any(x <= 0):
                raise DomainError("ln requires strictly positive inputs")
            out = np.log(x)
        else:
            if np.any(x < 0):
                raise DomainError("sqrt requires non-negative inputs")
            out = np.sqrt(x)
    elif op in _BINARY_OPS:
        if b is None:
            raise ContractError(f"{op} is binary")
        y = _binary_operand(x, b)
        if op == "add":
            out = x + y
        elif op == "sub":
            out = x - y
        elif op == "mul":
            out = x * y
        else:
            out = np.maximum(x, y)
    else:
        raise ContractError(f"unknown elementwise op {op!r}")
    return Tensor(np.asarray(out, dtype=x.dtype))


def reduce(op: str, a: TensorLike, axes: Iterable[int]) -> Tensor:
    """Reduce over an axis set with a fixed, run-to-run identical order.

    ``sum`` and ``max`` drop the reduced axes; ``argmax`` flattens the
    reduced axes (ascending order) and returns the lowest linear index of
    the maximum, which also fixes the tie rule.  Reductions use numpy's
    deterministic accumulation, so identical inputs give identical bits.
    """
    x = as_array(a)
    axes = tuple(sorted(int(ax) for ax in axes))
    if len(axes) == 0:
        raise ContractError("axis set must be non-empty")
    if len(set(axes)) != len(axes):
        raise ContractError(f"duplicate axes in {axes}")
    if any(ax < 0 or ax >= x.ndim for ax in axes):
        raise ShapeError(f"axes {axes} invalid for rank {x.ndim}")
    if op not in _REDUCE_OPS:
        raise ContractError(f"unknown reduce op {op!r}")

    if op == "argmax":
        kept = tuple(ax for ax in range(x.ndim) if ax not in axes)
        moved = np.transpose(x, kept + axes)
        flat = moved.reshape(moved.shape[:len(kept)] + (-1,))
        out = np.argmax(flat, axis=-1)
        if out.ndim == 0:
            out = out.reshape(1)
        return Tensor(out.astype(np.int64))

    if op == "sum":
        out = np.sum(x, axis=axes)
    else:
        out = np.max(x, axis=axes)
    if out.ndim == 0:
        out = out.reshape(1)
    return Tensor(np.asarray(out, dtype=x.dtype))
