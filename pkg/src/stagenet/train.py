"""Training loop, Adam optimizer, plateau scheduler, and checkpointing.

A run is fully determined by (seed, config, dataset): shuffling draws
from stream (seed, epoch), per-sample augmentation from stream
(seed, epoch*M + index), and weight init from the build seed, so
repeated runs produce identical metrics and a restored checkpoint
continues bit-exactly.
"""

from __future__ import annotations

import io
import json
import struct
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import scorenorm
from .backbones import Model
from .data import AugmentPolicy, Dataset, augment_batch, normalize_batch
from .errors import ConfigError, ContractError, FormatError, NumericsError, ShapeError
from .heads import predict
from .layers import BatchNorm2d
from .tensor import SeededRng

_SHUFFLE_TAG = 1 << 48


@dataclass
class TrainConfig:
    """Training-loop parameters; defaults follow the experiment protocol."""
    learning_rate: float = 0.001
    batch_size: int = 100
    epochs: int = 300
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    scheduler_factor: float = 0.1
    scheduler_patience: int = 10
    scheduler_threshold: float = 1e-4
    min_lr: float = 1e-6
    seed: int = 0
    crop: bool = True
    flip: bool = True
    erase: bool = True
    precision: str = "float32"

    def validate(self):
        if self.learning_rate <= 0 or self.min_lr <= 0:
            raise ConfigError("learning rates must be positive")
        if not (0 < self.scheduler_factor < 1):
            raise ConfigError("scheduler factor must lie in (0,1)")
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.scheduler_patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"unknown precision {self.precision!r}")
        return self


@dataclass
class EpochRow:
    epoch: int
    split: str
    loss: float
    accuracy: float
    lr: float
    seconds: float


@dataclass
class RunMetrics:
    """Per-epoch rows plus the best test accuracy and when it happened."""
    rows: list = field(default_factory=list)
    best_test_accuracy: float = 0.0
    best_epoch: int = 0

    def add(self, row: EpochRow):
        self.rows.append(row)
        if row.split == "test" and row.accuracy > self.best_test_accuracy:
            self.best_test_accuracy = row.accuracy
            self.best_epoch = row.epoch

    def test_accuracy_at(self, epoch: int) -> float:
        for row in self.rows:
            if row.split == "test" and row.epoch == epoch:
                return row.accuracy
        raise ContractError(f"no test row for epoch {epoch}")

    def final_test_accuracy(self) -> float:
        tests = [r for r in self.rows if r.split == "test"]
        if not tests:
            raise ContractError("no test rows recorded")
        return tests[-1].accuracy


CSV_HEADER = "# stagenet metrics schema v1\nepoch,split,loss,accuracy,lr,seconds\n"


def metrics_to_csv(metrics: RunMetrics, record_timing: bool = True) -> str:
    out = io.StringIO()
    out.write(CSV_HEADER)
    for r in metrics.rows:
        secs = r.seconds if record_timing else 0.0
        out.write(f"{r.epoch},{r.split},{r.loss:.9f},{r.accuracy:.6f},{r.lr:.9g},{secs:.3f}\n")
    return out.getvalue()


def parse_metrics_csv(text: str) -> RunMetrics:
    metrics = RunMetrics()
    lines = text.splitlines()
    for ln, line in enumerate(lines, start=1):
        if not line or line.startswith("#"):
            continue
        if line.startswith("epoch,"):
            continue
        parts = line.split(",")
        if len(parts) != 6:
            raise FormatError(f"line {ln}: expected 6 fields, got {len(parts)}")
        try:
            metrics.add(EpochRow(int(parts[0]), parts[1], float(parts[2]),
                                 float(parts[3]), float(parts[4]), float(parts[5])))
        except ValueError as exc:
            raise FormatError(f"line {ln}: {exc}") from exc
    return metrics


class Adam(object):
    """Adam with bias correction; zero gradients leave parameters unchanged."""

    def __init__(self, params: dict, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, p in params.items():
            g = grads[k]
            if g.shape != p.shape:
                raise ShapeError(f"{k}: grad shape {g.shape} != param shape {p.shape}")
            m = self.m[k]
            v = self.v[k]
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            p -= (self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)).astype(p.dtype)


class PlateauScheduler:
    """Multiply lr by ``factor`` after ``patience`` epochs without an
    improvement larger than ``threshold``; never below ``min_lr``."""

    def __init__(self, lr: float, factor: float = 0.1, patience: int = 10,
                 threshold: float = 1e-4, min_lr: float = 1e-6):
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.threshold = threshold
        self.min_lr = min_lr
        self.best = np.inf
        self.bad_epochs = 0

    def update(self, monitored_loss: float) -> float:
        if monitored_loss < self.best - self.threshold:
            self.best = monitored_loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs > self.patience:
                self.lr = max(self.lr * self.factor, self.min_lr)
                self.bad_epochs = 0
        return self.lr

    def state(self) -> tuple:
        return (self.lr, float(self.best), self.bad_epochs)

    def load_state(self, state):
        self.lr, self.best, self.bad_epochs = state[0], state[1], int(state[2])


def _has_batchnorm(model: Model) -> bool:
    for s in model.sets:
        for _, layer in s._layers():
            if isinstance(layer, BatchNorm2d):
                return True
    return model.heads is not None  # every head carries a batchnorm


def _batch_slices(m: int, batch_size: int):
    """Full batches plus a trailing partial batch when it has >= 2 samples
    (a single leftover sample cannot feed train-mode batchnorm)."""
    out = []
    for start in range(0, m, batch_size):
        stop = min(start + batch_size, m)
        if stop - start >= 2 or stop - start == batch_size:
            out.append((start, stop))
    return out


def train_epoch(model: Model, optimizer: Adam, train_set: Dataset,
                cfg: TrainConfig, policy: AugmentPolicy, epoch: int):
    """One pass over shuffled mini-batches; returns (loss, accuracy)."""
    m = len(train_set)
    if m == 0:
        raise ContractError("training dataset is empty")
    perm = SeededRng(cfg.seed, _SHUFFLE_TAG + epoch).permutation(m)
    total_loss = 0.0
    total_correct = 0
    total_seen = 0
    augmenting = policy.crop_pad > 0 or policy.flip_prob > 0 or policy.erase_prob > 0
    for start, stop in _batch_slices(m, cfg.batch_size):
        idx = perm[start:stop]
        if augmenting:
            x = augment_batch(train_set, idx, policy, cfg.seed, epoch)
        else:
            x = normalize_batch(train_set.images[idx], policy)
        labels = train_set.labels[idx]
        out, _ = model.forward(x.astype(model.dtype), training=True)
        loss, grad = scorenorm.batch_cross_entropy(out, labels)
        if not np.isfinite(loss):
            layer = model.find_nonfinite_layer() or "model output"
            raise NumericsError(
                f"non-finite loss in epoch {epoch}; first offending layer: {layer}")
        model.zero_grads()
        model.backward(grad)
        optimizer.step(model.named_params(), model.named_grads())
        n = stop - start
        total_loss += loss * n
        total_correct += int(np.sum(predict(out) == labels))
        total_seen += n
    return total_loss / total_seen, total_correct / total_seen


def evaluate(model: Model, dataset: Dataset, policy: AugmentPolicy,
             batch_size: int = 200):
    """Eval-mode loss and accuracy; applies normalization only."""
    if len(dataset) == 0:
        raise ContractError("evaluation dataset is empty")
    total_loss = 0.0
    correct = 0
    for start in range(0, len(dataset), batch_size):
        stop = min(start + batch_size, len(dataset))
        x = normalize_batch(dataset.images[start:stop], policy)
        labels = dataset.labels[start:stop]
        out, _ = model.forward(x.astype(model.dtype), training=False)
        loss, _ = scorenorm.batch_cross_entropy(out, labels)
        total_loss += loss * (stop - start)
        correct += int(np.sum(predict(out) == labels))
    return total_loss / len(dataset), correct / len(dataset)


def run_training(model: Model, train_set: Dataset, test_set: Dataset,
                 cfg: TrainConfig, policy: AugmentPolicy,
                 start_epoch: int = 1, optimizer: Adam | None = None,
                 scheduler: PlateauScheduler | None = None,
                 metrics: RunMetrics | None = None,
                 checkpoint_path: str | None = None) -> RunMetrics:
    """Drive epochs ``start_epoch..cfg.epochs`` and collect metrics rows."""
    cfg.validate()
    if _has_batchnorm(model) and cfg.batch_size < 2:
        raise ConfigError("batch size must be >= 2 when batchnorm trains")
    optimizer = optimizer or Adam(model.named_params(), cfg.learning_rate,
                                  cfg.beta1, cfg.beta2, cfg.adam_eps)
    scheduler = scheduler or PlateauScheduler(cfg.learning_rate, cfg.scheduler_factor,
                                              cfg.scheduler_patience,
                                              cfg.scheduler_threshold, cfg.min_lr)
    metrics = metrics or RunMetrics()
    for epoch in range(start_epoch, cfg.epochs + 1):
        tic = time.perf_counter()
        optimizer.lr = scheduler.lr
        train_loss, train_acc = train_epoch(model, optimizer, train_set, cfg, policy, epoch)
        lr_used = scheduler.lr
        scheduler.update(train_loss)
        test_loss, test_acc = evaluate(model, test_set, policy,
                                       batch_size=max(cfg.batch_size, 2))
        secs = time.perf_counter() - tic
        metrics.add(EpochRow(epoch, "train", train_loss, train_acc, lr_used, secs))
        metrics.add(EpochRow(epoch, "test", test_loss, test_acc, lr_used, secs))
        if checkpoint_path is not None:
            save_checkpoint(checkpoint_path, model, optimizer, scheduler,
                            cfg, epoch + 1)
    return metrics


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------

MAGIC = b"STGNCKP1"
FORMAT_VERSION = 1
_DTYPE_CODES = {"float32": 0, "float64": 1, "int64": 2}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


def _write_record(out: io.BytesIO, name: str, arr: np.ndarray):
    nb = name.encode("utf-8")
    out.write(struct.pack("<H", len(nb)))
    out.write(nb)
    code = _DTYPE_CODES.get(arr.dtype.name)
    if code is None:
        raise ContractError(f"unsupported checkpoint dtype {arr.dtype}")
    out.write(struct.pack("<BB", code, arr.ndim))
    for d in arr.shape:
        out.write(struct.pack("<I", d))
    out.write(np.ascontiguousarray(arr).tobytes())


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError("checkpoint truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))


def _read_record(r: _Reader):
    (nlen,) = r.unpack("H")
    name = r.take(nlen).decode("utf-8")
    code, ndim = r.unpack("BB")
    if code not in _CODE_DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    shape = tuple(r.unpack("I" * ndim)) if ndim else ()
    dtype = np.dtype(_CODE_DTYPES[code])
    arr = np.frombuffer(r.take(int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
                                if ndim else dtype.itemsize), dtype=dtype)
    return name, arr.reshape(shape).copy()


@dataclass
class Checkpoint:
    config: dict
    epoch_next: int
    adam_t: int
    scheduler_state: tuple
    tensors: dict


def save_checkpoint(path: str, model: Model, optimizer: Adam,
                    scheduler: PlateauScheduler, cfg: TrainConfig,
                    epoch_next: int):
    """Little-endian binary: magic, version, config JSON, counters, then
    (name, dtype, shape, raw data) records for params, buffers and the
    optimizer moments."""
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<I", FORMAT_VERSION))
    blob = json.dumps(asdict(cfg), sort_keys=True).encode("utf-8")
    out.write(struct.pack("<Q", len(blob)))
    out.write(blob)
    out.write(struct.pack("<IQ", epoch_next, optimizer.t))
    out.write(struct.pack("<ddI", scheduler.lr, scheduler.best, scheduler.bad_epochs))
    records = []
    for name, arr in model.named_params().items():
        records.append((f"param:{name}", arr))
    for name, arr in model.named_buffers().items():
        records.append((f"buffer:{name}", arr))
    for name, arr in optimizer.m.items():
        records.append((f"adam_m:{name}", arr))
    for name, arr in optimizer.v.items():
        records.append((f"adam_v:{name}", arr))
    out.write(struct.pack("<I", len(records)))
    for name, arr in records:
        _write_record(out, name, arr)
    with open(path, "wb") as fh:
        fh.write(out.getvalue())


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.take(len(MAGIC)) != MAGIC:
        raise FormatError("bad magic bytes; not a stagenet checkpoint")
    (version,) = r.unpack("I")
    if version != FORMAT_VERSION:
        raise FormatError(f"checkpoint format version {version} unsupported "
                          f"(expected {FORMAT_VERSION})")
    (blen,) = r.unpack("Q")
    config = json.loads(r.take(blen).decode("utf-8"))
    epoch_next, adam_t = r.unpack("IQ")
    lr, best, bad = r.unpack("ddI")
    (count,) = r.unpack("I")
    tensors = {}
    for _ in range(count):
        name, arr = _read_record(r)
        tensors[name] = arr
    return Checkpoint(config=config, epoch_next=epoch_next, adam_t=adam_t,
                      scheduler_state=(lr, best, bad), tensors=tensors)


def restore_model(ckpt: Checkpoint, model: Model) -> None:
    """Copy checkpoint tensors into a built model, validating every shape."""
    params = model.named_params()
    buffers = model.named_buffers()
    for key, arr in ckpt.tensors.items():
        kind, _, name = key.partition(":")
        if kind == "param":
            target = params.get(name)
        elif kind == "buffer":
            target = buffers.get(name)
        else:
            continue
        if target is None:
            raise ShapeError(f"checkpoint tensor {name!r} has no counterpart in model")
        if target.shape != arr.shape:
            raise ShapeError(f"tensor {name!r}: checkpoint shape {arr.shape} "
                             f"!= model shape {target.shape}")
        target[...] = arr.astype(target.dtype)


def restore_optimizer(ckpt: Checkpoint, optimizer: Adam) -> None:
    optimizer.t = ckpt.adam_t
    for key, arr in ckpt.tensors.items():
        kind, _, name = key.partition(":")
        if kind == "adam_m" and name in optimizer.m:
            optimizer.m[name][...] = arr
        elif kind == "adam_v" and name in optimizer.v:
            optimizer.v[name][...] = arr
