"""Declarative backbone builder, built-in presets, and complexity stats.

A backbone is an ordered chain of stages; stage t maps feature h_{t-1}
to h_t, shrinking spatial extents and growing channels.  ``build``
attaches either one final classifier (``original`` mode) or one
classifier head per stage plus a score-sum aggregator (``multi`` mode).

Presets: ``vgg16`` and ``resnet18`` follow their published CIFAR-scale
layouts (convs listed per stage; VGG pools after every stage, ResNet
strides inside stages 3-5).  ``mini_vgg``, ``mini_resnet`` and
``mini_cnn`` are reduced-width variants of the same grammar for fast
deterministic experiments.

Complexity accounting counts one multiply-accumulate as one FLOP by
default (a ``x2`` mode doubles conv/linear costs); pooling, activations
and normalizers count one op per output element.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .errors import BuildError, ContractError, ShapeError
from .heads import ClassifierHead, aggregate_scores
from .layers import AdaptiveMaxPool, BatchNorm2d, Conv2d, Layer, Linear, MaxPool2x2, ReLU, add_skip
from .tensor import SeededRng, TensorLike, as_array

BlockKind = Literal["plain_conv", "residual_basic", "downsample_transition", "concat_merge"]
Reduction = Literal["pool", "stride", "none"]


@dataclass(frozen=True)
class BlockSpec:
    """One table cell: a kernel/channel plan repeated ``repeat`` times."""
    kind: BlockKind
    plan: tuple  # ((kernel, out_channels), ...)
    repeat: int = 1
    batchnorm: bool = True

    def __post_init__(self):
        if self.repeat < 1:
            raise BuildError("repeat must be >= 1")
        if not self.plan:
            raise BuildError("empty channel plan")
        for k, ch in self.plan:
            if k not in (1, 3):
                raise BuildError(f"kernel must be 1 or 3, got {k}")
            if ch < 1:
                raise BuildError(f"channels must be positive, got {ch}")


@dataclass(frozen=True)
class SetSpec:
    """One stage: its blocks plus how (or whether) it reduces spatial size."""
    blocks: tuple
    reduction: Reduction = "none"


@dataclass(frozen=True)
class BackboneSpec:
    name: str
    sets: tuple
    in_channels: int = 3

    @property
    def n_sets(self) -> int:
        return len(self.sets)


# --------------------------------------------------------------------------
# composite modules
# --------------------------------------------------------------------------

class _Composite:
    """Shared traversal plumbing for blocks, stages and classifiers."""

    def children(self) -> list[tuple[str, object]]:
        raise NotImplementedError

    def _layers(self):
        for name, child in self.children():
            if isinstance(child, Layer):
                yield name, child
            else:
                for sub, layer in child._layers():
                    yield f"{name}.{sub}", layer

    def set_training(self, flag: bool):
        for _, layer in self._layers():
            layer.set_training(flag)

    def zero_grads(self):
        for _, layer in self._layers():
            layer.zero_grads()

    def named_params(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {}
        for name, layer in self._layers():
            for k, v in layer.params.items():
                out[f"{prefix}{name}.{k}"] = v
        return out

    def named_grads(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {}
        for name, layer in self._layers():
            for k, v in layer.grads.items():
                out[f"{prefix}{name}.{k}"] = v
        return out

    def named_buffers(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {}
        for name, layer in self._layers():
            for k, v in layer.buffers().items():
                out[f"{prefix}{name}.{k}"] = v
        return out


class PlainConvBlock(_Composite):
    """conv(+bn)+relu chain; bias only when no batchnorm follows the conv."""

    def __init__(self, in_channels: int, spec: BlockSpec, stride_first: int,
                 rng: SeededRng, dtype):
        self.convs: list[Conv2d] = []
        self.bns: list[BatchNorm2d | None] = []
        self.relus: list[ReLU] = []
        ch = in_channels
        for rep in range(spec.repeat):
            for idx, (k, out_ch) in enumerate(spec.plan):
                stride = stride_first if (rep == 0 and idx == 0) else 1
                self.convs.append(Conv2d(ch, out_ch, k, stride=stride, pad=k // 2,
                                         bias=not spec.batchnorm, rng=rng, dtype=dtype))
                self.bns.append(BatchNorm2d(out_ch, dtype=dtype) if spec.batchnorm else None)
                self.relus.append(ReLU())
                ch = out_ch
        self.out_channels = ch

    def children(self):
        out = []
        for i, conv in enumerate(self.convs):
            out.append((f"conv{i}", conv))
            if self.bns[i] is not None:
                out.append((f"bn{i}", self.bns[i]))
        return out

    def forward(self, x: np.ndarray) -> np.ndarray:
        for conv, bn, relu in zip(self.convs, self.bns, self.relus):
            x = conv.forward(x)
            if bn is not None:
                x = bn.forward(x)
            x = relu.forward(x)
        return x

    def backward(self, grad: np.ndarray) -> np.ndarray:
        for conv, bn, relu in zip(reversed(self.convs), reversed(self.bns), reversed(self.relus)):
            grad = relu.backward(grad)
            if bn is not None:
                grad = bn.backward(grad)
            grad = conv.backward(grad)
        return grad

    def count_stats(self, in_shape, factor: int):
        b, c, h, w = in_shape
        params = flops = 0
        for conv, bn in zip(self.convs, self.bns):
            ho, wo = conv.out_hw(h, w)
            params += sum(p.size for p in conv.params.values())
            flops += factor * b * conv.out_channels * ho * wo * conv.in_channels * conv.kernel_size ** 2
            if bn is not None:
                params += sum(p.size for p in bn.params.values())
                flops += b * conv.out_channels * ho * wo
            flops += b * conv.out_channels * ho * wo  # relu
            c, h, w = conv.out_channels, ho, wo
        return params, flops, (b, c, h, w)


class _ResidualUnit(_Composite):
    """conv-bn-relu-conv-bn with identity or projected skip, then relu."""

    def __init__(self, in_channels: int, plan, stride: int, rng: SeededRng, dtype):
        (k1, ch1), (k2, ch2) = plan
        self.conv1 = Conv2d(in_channels, ch1, k1, stride=stride, pad=k1 // 2,
                            bias=False, rng=rng, dtype=dtype)
        self.bn1 = BatchNorm2d(ch1, dtype=dtype)
        self.relu1 = ReLU()
        self.conv2 = Conv2d(ch1, ch2, k2, stride=1, pad=k2 // 2,
                            bias=False, rng=rng, dtype=dtype)
        self.bn2 = BatchNorm2d(ch2, dtype=dtype)
        self.relu2 = ReLU()
        if stride != 1 or in_channels != ch2:
            self.proj = Conv2d(in_channels, ch2, 1, stride=stride, pad=0,
                               bias=False, rng=rng, dtype=dtype)
            self.proj_bn = BatchNorm2d(ch2, dtype=dtype)
        else:
            self.proj = None
            self.proj_bn = None
        self.out_channels = ch2

    def children(self):
        out = [("conv1", self.conv1), ("bn1", self.bn1),
               ("conv2", self.conv2), ("bn2", self.bn2)]
        if self.proj is not None:
            out += [("proj", self.proj), ("proj_bn", self.proj_bn)]
        return out

    def forward(self, x: np.ndarray) -> np.ndarray:
        main = self.relu1.forward(self.bn1.forward(self.conv1.forward(x)))
        main = self.bn2.forward(self.conv2.forward(main))
        if self.proj is not None:
            skip = self.proj_bn.forward(self.proj.forward(x))
        else:
            skip = x
        return self.relu2.forward(add_skip(main, skip))

    def backward(self, grad: np.ndarray) -> np.ndarray:
        grad = self.relu2.backward(grad)
        gmain = self.conv2.backward(self.bn2.backward(grad))
        gmain = self.conv1.backward(self.bn1.backward(self.relu1.backward(gmain)))
        if self.proj is not None:
            gskip = self.proj.backward(self.proj_bn.backward(grad))
        else:
            gskip = grad
        return gmain + gskip

    def count_stats(self, in_shape, factor: int):
        b, c, h, w = in_shape
        params = flops = 0
        for conv, bn in ((self.conv1, self.bn1), (self.conv2, self.bn2)):
            ho, wo = conv.out_hw(h, w)
            params += sum(p.size for p in conv.params.values())
            flops += factor * b * conv.out_channels * ho * wo * conv.in_channels * conv.kernel_size ** 2
            params += sum(p.size for p in bn.params.values())
            flops += 2 * b * conv.out_channels * ho * wo  # bn + relu/skip-add
            h, w = ho, wo
        if self.proj is not None:
            bi, ci, hi, wi = in_shape
            ho, wo = self.proj.out_hw(hi, wi)
            params += sum(p.size for p in self.proj.params.values())
            params += sum(p.size for p in self.proj_bn.params.values())
            flops += factor * b * self.proj.out_channels * ho * wo * self.proj.in_channels
            flops += b * self.proj.out_channels * ho * wo
        return params, flops, (b, self.out_channels, h, w)


class ResidualBlock(_Composite):
    """``repeat`` stacked residual units; stride applies to the first."""

    def __init__(self, in_channels: int, spec: BlockSpec, stride_first: int,
                 rng: SeededRng, dtype):
        if len(spec.plan) != 2:
            raise BuildError("residual_basic needs a two-conv plan")
        self.units: list[_ResidualUnit] = []
        ch = in_channels
        for rep in range(spec.repeat):
            stride = stride_first if rep == 0 else 1
            unit = _ResidualUnit(ch, spec.plan, stride, rng, dtype)
            self.units.append(unit)
            ch = unit.out_channels
        self.out_channels = ch

    def children(self):
        return [(f"unit{i}", u) for i, u in enumerate(self.units)]

    def forward(self, x: np.ndarray) -> np.ndarray:
        for u in self.units:
            x = u.forward(x)
        return x

    def backward(self, grad: np.ndarray) -> np.ndarray:
        for u in reversed(self.units):
            grad = u.backward(grad)
        return grad

    def count_stats(self, in_shape, factor: int):
        params = flops = 0
        shape = in_shape
        for u in self.units:
            p, f, shape = u.count_stats(shape, factor)
            params += p
            flops += f
        return params, flops, shape


class TransitionBlock(_Composite):
    """1x1 conv channel adapter (+bn+relu); spatial reduction is stage-level."""

    def __init__(self, in_channels: int, spec: BlockSpec, stride_first: int,
                 rng: SeededRng, dtype):
        if len(spec.plan) != 1 or spec.plan[0][0] != 1:
            raise BuildError("downsample_transition needs a single 1x1 plan")
        out_ch = spec.plan[0][1]
        self.conv = Conv2d(in_channels, out_ch, 1, stride=stride_first, pad=0,
                           bias=not spec.batchnorm, rng=rng, dtype=dtype)
        self.bn = BatchNorm2d(out_ch, dtype=dtype) if spec.batchnorm else None
        self.relu = ReLU()
        self.out_channels = out_ch

    def children(self):
        out = [("conv", self.conv)]
        if self.bn is not None:
            out.append(("bn", self.bn))
        return out

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = self.conv.forward(x)
        if self.bn is not None:
            x = self.bn.forward(x)
        return self.relu.forward(x)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        grad = self.relu.backward(grad)
        if self.bn is not None:
            grad = self.bn.backward(grad)
        return self.conv.backward(grad)

    def count_stats(self, in_shape, factor: int):
        b, c, h, w = in_shape
        ho, wo = self.conv.out_hw(h, w)
        params = sum(p.size for p in self.conv.params.values())
        flops = factor * b * self.out_channels * ho * wo * c
        if self.bn is not None:
            params += sum(p.size for p in self.bn.params.values())
            flops += b * self.out_channels * ho * wo
        flops += b * self.out_channels * ho * wo
        return params, flops, (b, self.out_channels, ho, wo)


class ConcatMergeBlock(_Composite):
    """Dense-style merge: output is [input, body(input)] along channels.

    Expressive enough for dense-block grammars; no built-in preset uses it.
    """

    def __init__(self, in_channels: int, spec: BlockSpec, stride_first: int,
                 rng: SeededRng, dtype):
        if stride_first != 1:
            raise BuildError("concat_merge does not take a stage stride")
        self.in_channels = in_channels
        self.body = PlainConvBlock(in_channels, spec, 1, rng, dtype)
        self.out_channels = in_channels + self.body.out_channels

    def children(self):
        return [("body", self.body)]

    def forward(self, x: np.ndarray) -> np.ndarray:
        y = self.body.forward(x)
        if y.shape[2:] != x.shape[2:]:
            raise BuildError("concat_merge body must preserve spatial extents")
        return np.concatenate([x, y], axis=1)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        gx = grad[:, :self.in_channels]
        gy = grad[:, self.in_channels:]
        return np.ascontiguousarray(gx) + self.body.backward(np.ascontiguousarray(gy))

    def count_stats(self, in_shape, factor: int):
        b, c, h, w = in_shape
        params, flops, (b2, cb, ho, wo) = self.body.count_stats(in_shape, factor)
        flops += b * self.out_channels * ho * wo  # concat copy
        return params, flops, (b, self.out_channels, ho, wo)


_BLOCK_BUILDERS = {
    "plain_conv": PlainConvBlock,
    "residual_basic": ResidualBlock,
    "downsample_transition": TransitionBlock,
    "concat_merge": ConcatMergeBlock,
}


class SetModule(_Composite):
    """One stage: its blocks plus the stage-level spatial reduction."""

    def __init__(self, index: int, in_channels: int, spec: SetSpec,
                 rng: SeededRng, dtype):
        self.index = index
        self.blocks = []
        ch = in_channels
        stride_first = 2 if spec.reduction == "stride" else 1
        for bi, bspec in enumerate(spec.blocks):
            builder = _BLOCK_BUILDERS.get(bspec.kind)
            if builder is None:
                raise BuildError(f"unknown block kind {bspec.kind!r}")
            block = builder(ch, bspec, stride_first if bi == 0 else 1, rng, dtype)
            self.blocks.append(block)
            ch = block.out_channels
        self.pool = MaxPool2x2() if spec.reduction == "pool" else None
        self.out_channels = ch

    def children(self):
        out = [(f"block{i}", b) for i, b in enumerate(self.blocks)]
        if self.pool is not None:
            out.append(("pool", self.pool))
        return out

    def forward(self, x: np.ndarray) -> np.ndarray:
        for b in self.blocks:
            x = b.forward(x)
        if self.pool is not None:
            if x.shape[2] < 2 or x.shape[3] < 2:
                raise ShapeError(
                    f"set {self.index}: feature {x.shape[2]}x{x.shape[3]} too small to pool")
            x = self.pool.forward(x)
        return x

    def backward(self, grad: np.ndarray) -> np.ndarray:
        if self.pool is not None:
            grad = self.pool.backward(grad)
        for b in reversed(self.blocks):
            grad = b.backward(grad)
        return grad

    def count_stats(self, in_shape, factor: int):
        params = flops = 0
        shape = in_shape
        for b in self.blocks:
            p, f, shape = b.count_stats(shape, factor)
            params += p
            flops += f
        if self.pool is not None:
            bsz, c, h, w = shape
            if h < 2 or w < 2:
                raise ShapeError(f"set {self.index}: feature {h}x{w} too small to pool")
            ho, wo = self.pool.out_hw(h, w)
            flops += bsz * c * ho * wo
            shape = (bsz, c, ho, wo)
        return params, flops, shape


class OriginalClassifier(_Composite):
    """Final classifier: global max pool, then a linear stack on the channels.

    ``hidden`` inserts intermediate linear+relu widths (e.g. (4096, 4096)
    for the published VGG16 stack); the default is a single linear map.
    """

    def __init__(self, in_channels: int, n_classes: int, hidden: Sequence[int] = (),
                 rng: SeededRng | None = None, dtype=np.float32):
        rng = rng if rng is not None else SeededRng(0)
        self.pool = AdaptiveMaxPool()
        self.in_channels = in_channels
        self.linears: list[Linear] = []
        self.relus: list[ReLU] = []
        widths = [in_channels, *hidden, n_classes]
        for i in range(len(widths) - 1):
            self.linears.append(Linear(widths[i], widths[i + 1], bias=True, rng=rng, dtype=dtype))
            if i < len(widths) - 2:
                self.relus.append(ReLU())

    def children(self):
        return [("pool", self.pool)] + [(f"fc{i}", l) for i, l in enumerate(self.linears)]

    def forward(self, x: np.ndarray) -> np.ndarray:
        z = self.pool.forward(x)
        z = z.reshape(z.shape[0], self.in_channels)
        for i, lin in enumerate(self.linears):
            z = lin.forward(z)
            if i < len(self.relus):
                z = self.relus[i].forward(z)
        return z

    def backward(self, grad: np.ndarray) -> np.ndarray:
        for i in range(len(self.linears) - 1, -1, -1):
            if i < len(self.relus):
                grad = self.relus[i].backward(grad)
            grad = self.linears[i].backward(grad)
        grad = grad.reshape(grad.shape[0], self.in_channels, 1, 1)
        return self.pool.backward(grad)

    def count_stats(self, in_shape, factor: int):
        b, c, h, w = in_shape
        params = 0
        flops = b * c  # adaptive pool
        feat = c
        for lin in self.linears:
            params += sum(p.size for p in lin.params.values())
            flops += factor * b * lin.in_features * lin.out_features
            feat = lin.out_features
        flops += b * feat * max(0, len(self.relus))
        return params, flops, (b, feat)


# --------------------------------------------------------------------------
# model
# --------------------------------------------------------------------------

@dataclass
class ModelStats:
    """Trainable-parameter and forward-FLOP totals with per-stage breakdown."""
    params: int
    flops: int
    per_set: list
    classifier_params: int
    classifier_flops: int
    input_shape: tuple
    flop_convention: str

    def lines(self) -> list[str]:
        out = [f"input shape {self.input_shape}, flop convention: {self.flop_convention}"]
        for name, p, f in self.per_set:
            out.append(f"  {name:<10s} params {p:>12,d}   flops {f:>14,d}")
        out.append(f"  {'classifier':<10s} params {self.classifier_params:>12,d}   "
                   f"flops {self.classifier_flops:>14,d}")
        out.append(f"  {'total':<10s} params {self.params:>12,d}   flops {self.flops:>14,d}")
        return out


class Model:
    """A built backbone plus its classifier(s); owns forward and backward."""

    def __init__(self, spec: BackboneSpec, sets: list[SetModule], n_classes: int,
                 mode: str, heads: list[ClassifierHead] | None,
                 classifier: OriginalClassifier | None, dtype):
        self.spec = spec
        self.sets = sets
        self.n_classes = n_classes
        self.mode = mode
        self.heads = heads
        self.classifier = classifier
        self.dtype = dtype
        self._taps: list[np.ndarray] | None = None

    @property
    def n_sets(self) -> int:
        return len(self.sets)

    def set_training(self, flag: bool):
        for s in self.sets:
            s.set_training(flag)
        if self.heads is not None:
            for h in self.heads:
                h.set_training(flag)
        if self.classifier is not None:
            self.classifier.set_training(flag)

    def zero_grads(self):
        for s in self.sets:
            s.zero_grads()
        if self.heads is not None:
            for h in self.heads:
                h.zero_grads()
        if self.classifier is not None:
            self.classifier.zero_grads()

    def named_params(self) -> dict[str, np.ndarray]:
        out = {}
        for i, s in enumerate(self.sets, start=1):
            out.update(s.named_params(prefix=f"set{i}."))
        if self.heads is not None:
            for h in self.heads:
                out.update(h.named_params(prefix=f"head{h.t}."))
        if self.classifier is not None:
            out.update(self.classifier.named_params(prefix="classifier."))
        return out

    def named_grads(self) -> dict[str, np.ndarray]:
        out = {}
        for i, s in enumerate(self.sets, start=1):
            out.update(s.named_grads(prefix=f"set{i}."))
        if self.heads is not None:
            for h in self.heads:
                out.update(h.named_grads(prefix=f"head{h.t}."))
        if self.classifier is not None:
            out.update(self.classifier.named_grads(prefix="classifier."))
        return out

    def named_buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for i, s in enumerate(self.sets, start=1):
            out.update(s.named_buffers(prefix=f"set{i}."))
        if self.heads is not None:
            for h in self.heads:
                out.update(h.named_buffers(prefix=f"head{h.t}."))
        if self.classifier is not None:
            out.update(self.classifier.named_buffers(prefix="classifier."))
        return out

    def forward(self, x: TensorLike, training: bool = False):
        """Run the chain; returns (output, per_head) where per_head is None
        in original mode.  Eval mode (training=False) is deterministic."""
        x = as_array(x)
        if x.ndim != 4 or x.shape[1] != self.spec.in_channels:
            raise ShapeError(
                f"expected (B,{self.spec.in_channels},H,W) input, got {x.shape}")
        self.set_training(training)
        taps = []
        h = x.astype(self.dtype, copy=False)
        for s in self.sets:
            h = s.forward(h)
            taps.append(h)
        self._taps = taps
        if self.mode == "multi":
            per_head = [head.forward(t) for head, t in zip(self.heads, taps)]
            return aggregate_scores(per_head), per_head
        return self.classifier.forward(taps[-1]), None

    def backward(self, grad_out: np.ndarray) -> None:
        """Backpropagate from the model output gradient into all parameters."""
        if self._taps is None:
            raise ContractError("backward called before forward")
        grad_out = np.asarray(grad_out, dtype=self.dtype)
        if self.mode == "multi":
            # the aggregate is a plain sum, so each head sees the same gradient
            tap_grads = [head.backward(grad_out) for head in self.heads]
        else:
            tap_grads = [None] * (self.n_sets - 1) + [self.classifier.backward(grad_out)]
        grad = None
        for t in range(self.n_sets - 1, -1, -1):
            g = tap_grads[t]
            if grad is not None:
                g = grad if g is None else g + grad
            grad = self.sets[t].backward(g)
        self._taps = None

    def find_nonfinite_layer(self) -> str | None:
        """Name of the first stage/head whose cached output went non-finite."""
        if self._taps is None:
            return None
        for i, t in enumerate(self._taps, start=1):
            if not np.all(np.isfinite(t)):
                return f"set{i}"
        return None

    def count_stats(self, input_shape, flop_mode: int = 1) -> ModelStats:
        """Exact trainable-scalar count and forward FLOPs at ``input_shape``."""
        if flop_mode not in (1, 2):
            raise ContractError("flop_mode is 1 (MAC=1) or 2 (MAC=2)")
        b, c, h, w = input_shape
        if c != self.spec.in_channels:
            raise ShapeError(f"input channels {c} != spec {self.spec.in_channels}")
        per_set = []
        shape = tuple(input_shape)
        tap_shapes = []
        for i, s in enumerate(self.sets, start=1):
            p, f, shape = s.count_stats(shape, flop_mode)
            tap_shapes.append(shape)
            per_set.append([f"set{i}", p, f])
        cls_p = cls_f = 0
        if self.mode == "multi":
            # head cost is attributed to the stage it taps
            for head, tshape in zip(self.heads, tap_shapes):
                bb, cc, hh, ww = tshape
                hp = sum(p.size for p in head.conv.params.values())
                hf = flop_mode * bb * head.target_channels * hh * ww * cc * 9
                hf += bb * head.target_channels          # adaptive pool
                hp += sum(p.size for p in head.bn.params.values())
                hf += bb * head.target_channels          # batchnorm on (1,1)
                hp += sum(p.size for p in head.fc.params.values())
                hf += flop_mode * bb * head.target_channels * head.n_classes
                hf += 2 * bb * head.n_classes            # softplus + normalizer
                per_set[head.t - 1][1] += hp
                per_set[head.t - 1][2] += hf
                cls_p += hp
                cls_f += hf
        else:
            cls_p, cls_f, _ = self.classifier.count_stats(tap_shapes[-1], flop_mode)
            per_set.append(["classifier", cls_p, cls_f])
        total_p = sum(row[1] for row in per_set)
        total_f = sum(row[2] for row in per_set)
        if self.mode == "original":
            per_set = per_set[:-1]
        convention = "1 MAC = 1 FLOP" if flop_mode == 1 else "1 MAC = 2 FLOPs"
        return ModelStats(params=total_p, flops=total_f,
                          per_set=[tuple(row) for row in per_set],
                          classifier_params=cls_p, classifier_flops=cls_f,
                          input_shape=tuple(input_shape), flop_convention=convention)


# --------------------------------------------------------------------------
# builder and presets
# --------------------------------------------------------------------------

def build(spec: BackboneSpec, mode: str = "original", n_classes: int = 10,
          normalizer: str = "l2", hidden: Sequence[int] = (),
          seed: int = 0, dtype=np.float32) -> Model:
    """Build a model from a backbone description.

    ``mode="original"`` appends one final classifier on the last feature;
    ``mode="multi"`` attaches one head per stage (all heads adapt to the
    last stage's channel width) and sums their score vectors.
    """
    if mode not in ("original", "multi"):
        raise ContractError(f"mode must be 'original' or 'multi', got {mode!r}")
    if spec.n_sets < 1:
        raise BuildError("backbone needs at least one set")
    rng = SeededRng(seed, 1000)
    sets = []
    ch = spec.in_channels
    for i, sspec in enumerate(spec.sets, start=1):
        s = SetModule(i, ch, sspec, rng, dtype)
        sets.append(s)
        ch = s.out_channels
    target = sets[-1].out_channels
    if mode == "multi":
        heads = [ClassifierHead(t, s.out_channels, target, n_classes,
                                normalizer=normalizer, rng=rng, dtype=dtype)
                 for t, s in enumerate(sets, start=1)]
        return Model(spec, sets, n_classes, "multi", heads, None, dtype)
    classifier = OriginalClassifier(target, n_classes, hidden=hidden, rng=rng, dtype=dtype)
    return Model(spec, sets, n_classes, "original", None, classifier, dtype)


def _plain(ch: int, n: int, bn: bool) -> BlockSpec:
    return BlockSpec("plain_conv", ((3, ch),), repeat=n, batchnorm=bn)


def _res(ch: int, n: int) -> BlockSpec:
    return BlockSpec("residual_basic", ((3, ch), (3, ch)), repeat=n)


def vgg16_spec() -> BackboneSpec:
    """Thirteen 3x3 convs in five pooled stages (64-64-128-256-512 plan)."""
    return BackboneSpec("vgg16", (
        SetSpec((_plain(64, 2, False),), "pool"),
        SetSpec((_plain(128, 2, False),), "pool"),
        SetSpec((_plain(256, 3, False),), "pool"),
        SetSpec((_plain(512, 3, False),), "pool"),
        SetSpec((_plain(512, 3, False),), "pool"),
    ))


def resnet18_spec() -> BackboneSpec:
    """Stem conv plus four two-unit residual stages; strides in stages 3-5."""
    return BackboneSpec("resnet18", (
        SetSpec((_plain(64, 1, True),), "none"),
        SetSpec((_res(64, 2),), "none"),
        SetSpec((_res(128, 2),), "stride"),
        SetSpec((_res(256, 2),), "stride"),
        SetSpec((_res(512, 2),), "stride"),
    ))


def mini_vgg_spec() -> BackboneSpec:
    """Three pooled plain stages at reduced widths (8-16-32)."""
    return BackboneSpec("mini_vgg", (
        SetSpec((_plain(8, 1, False),), "pool"),
        SetSpec((_plain(16, 2, False),), "pool"),
        SetSpec((_plain(32, 2, False),), "pool"),
    ))


def mini_resnet_spec() -> BackboneSpec:
    """Stem plus three single-unit residual stages, strides in stages 2-4."""
    return BackboneSpec("mini_resnet", (
        SetSpec((_plain(8, 1, True),), "none"),
        SetSpec((_res(16, 1),), "stride"),
        SetSpec((_res(32, 1),), "stride"),
        SetSpec((_res(32, 1),), "stride"),
    ))


def mini_cnn_spec() -> BackboneSpec:
    """Single pooled stage of two plain convs; the degenerate one-set chain."""
    return BackboneSpec("mini_cnn", (
        SetSpec((_plain(16, 2, False),), "pool"),
    ))


PRESETS = {
    "vgg16": vgg16_spec,
    "resnet18": resnet18_spec,
    "mini_vgg": mini_vgg_spec,
    "mini_resnet": mini_resnet_spec,
    "mini_cnn": mini_cnn_spec,
}


def build_preset(name: str, mode: str = "original", n_classes: int = 10,
                 normalizer: str = "l2", hidden: Sequence[int] = (),
                 seed: int = 0, dtype=np.float32) -> Model:
    if name not in PRESETS:
        raise ContractError(f"unknown preset {name!r}; known: {sorted(PRESETS)}")
    return build(PRESETS[name](), mode=mode, n_classes=n_classes,
                 normalizer=normalizer, hidden=hidden, seed=seed, dtype=dtype)
