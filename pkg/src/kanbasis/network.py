"""Stacked KAN networks: construction, losses, optimizers, training, files."""

from __future__ import annotations

import io
import json
import logging
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

from .basis import DEFAULT_HI, DEFAULT_LO, FAMILIES, BSplineBasis, GaussianRBFBasis, GridSpec, make_basis
from .errors import ConfigError, DataError, FormatError, NumericError, ShapeError
from .layers import KanLayer, Layer, LayerNorm, LinearLayer

log = logging.getLogger(__name__)

NORM_PLACEMENTS = ("auto", "none", "all", "hidden")


@dataclass(frozen=True)
class NetworkSpec:
    """Declarative description of a network.

    ``layernorm`` controls where normalization layers go in front of KAN
    layers: ``all`` (every KAN layer, including the first), ``hidden`` (all
    but the first), ``none``, or ``auto`` which means ``all`` for the RBF
    family and ``none`` for splines.
    """

    widths: tuple[int, ...]
    family: str = "rbf"
    basis_count: int = 8
    order: int = 3
    lo: float = DEFAULT_LO
    hi: float = DEFAULT_HI
    bandwidth: float | None = None
    layernorm: str = "auto"
    linear_head: bool = False
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 2:
            raise ConfigError(f"need at least input and output widths, got {list(self.widths)}")
        if any(w < 1 for w in self.widths):
            raise ConfigError(f"layer widths must be >= 1, got {list(self.widths)}")
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown basis family {self.family!r}")
        if self.layernorm not in NORM_PLACEMENTS:
            raise ConfigError(f"layernorm placement must be one of {NORM_PLACEMENTS}, got {self.layernorm!r}")

    def norm_placement(self) -> str:
        if self.layernorm == "auto":
            return "all" if self.family == "rbf" else "none"
        return self.layernorm

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(**{**d, "widths": tuple(d["widths"])})


class Network:
    def __init__(self, layers: Sequence[Layer], spec: NetworkSpec | None = None):
        self.layers = list(layers)
        self.spec = spec
        _check_chain(self.layers)

    @property
    def in_dim(self) -> int:
        return _dims(self.layers[0])[0]

    @property
    def out_dim(self) -> int:
        return _dims(self.layers[-1])[1]

    def forward(self, x) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x)
        return x

    __call__ = forward

    def backward(self, grad) -> np.ndarray:
        """Backpropagate ``grad`` (d loss / d output); returns d loss / d input.

        Parameter gradients end up in each layer's ``grads``.
        """
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def parameters(self) -> Iterator[tuple[str, np.ndarray, Layer]]:
        for i, layer in enumerate(self.layers):
            for name, value in layer.params.items():
                yield f"{i}.{layer.kind}.{name}", value, layer

    def gradients(self) -> dict[str, np.ndarray]:
        return {
            f"{i}.{layer.kind}.{name}": layer.grads[name]
            for i, layer in enumerate(self.layers)
            for name in layer.params
        }

    def max_abs_param(self) -> float:
        return max(float(np.max(np.abs(p))) for _, p, _ in self.parameters())

    def copy_params(self) -> dict[str, np.ndarray]:
        return {name: p.copy() for name, p, _ in self.parameters()}


def _dims(layer: Layer) -> tuple[int, int]:
    if isinstance(layer, LayerNorm):
        return layer.dim, layer.dim
    return layer.in_dim, layer.out_dim


def _check_chain(layers):
    if not layers:
        raise ConfigError("a network needs at least one layer")
    for i in range(1, len(layers)):
        prev_out = _dims(layers[i - 1])[1]
        cur_in = _dims(layers[i])[0]
        if prev_out != cur_in:
            raise ConfigError(
                f"layer {i} ({layers[i].kind}) expects {cur_in} inputs but layer {i - 1} produces {prev_out}"
            )


def build(spec: NetworkSpec) -> Network:
    """Instantiate ``spec`` with parameters drawn deterministically from ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    basis = make_basis(spec.family, spec.basis_count, spec.lo, spec.hi, spec.order, spec.bandwidth)
    placement = spec.norm_placement()
    layers: list[Layer] = []
    pairs = list(zip(spec.widths[:-1], spec.widths[1:]))
    if spec.linear_head:
        *pairs, head = pairs
        if not pairs:
            raise ConfigError("a linear head needs at least one KAN layer before it")
    for i, (d_in, d_out) in enumerate(pairs):
        if placement == "all" or (placement == "hidden" and i > 0):
            layers.append(LayerNorm(d_in))
        layers.append(KanLayer(d_in, d_out, basis, rng=rng))
    if spec.linear_head:
        layers.append(LinearLayer(*head, rng=rng))
    return Network(layers, spec)


# ---------------------------------------------------------------- losses


def cross_entropy(logits, labels) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient with respect to ``logits``."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    batch, n_classes = logits.shape
    if labels.shape != (batch,):
        raise ShapeError(f"expected {batch} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise DataError(f"labels must lie in [0, {n_classes}), got range [{labels.min()}, {labels.max()}]")
    labels = labels.astype(np.intp)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    rows = np.arange(batch)
    loss = -float(np.mean(log_probs[rows, labels]))
    grad = np.exp(log_probs)
    grad[rows, labels] -= 1.0
    return loss, grad / batch


def mse(outputs, targets) -> tuple[float, np.ndarray]:
    """Mean over all entries of the squared error, and its gradient."""
    outputs = np.asarray(outputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64).reshape(outputs.shape)
    diff = outputs - targets
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


LOSSES = {"cross_entropy": cross_entropy, "mse": mse}


# ------------------------------------------------------------ optimizers


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, net: Network):
        for layer in net.layers:
            for name, p in layer.params.items():
                p -= self.lr * layer.grads[name]


class Adam:
    def __init__(self, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self._m: dict[int, np.ndarray] = {}
        self._v: dict[int, np.ndarray] = {}

    def step(self, net: Network):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for layer in net.layers:
            for name, p in layer.params.items():
                g = layer.grads[name]
                key = id(p)
                m = self._m.setdefault(key, np.zeros_like(p))
                v = self._v.setdefault(key, np.zeros_like(p))
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * g * g
                p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# -------------------------------------------------------------- training


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 64
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0
    loss: str = "cross_entropy"

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate >= 0:
            # lr == 0 is allowed as a no-op run
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.loss not in LOSSES:
            raise ConfigError(f"unknown loss {self.loss!r}")

    def make_optimizer(self):
        return Adam(self.learning_rate) if self.optimizer == "adam" else SGD(self.learning_rate)


@dataclass(frozen=True)
class EpochRecord:
    """Metrics after one epoch. ``val_accuracy`` is None for regression data."""

    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float | None
    wall_time: float = field(compare=False)


def _targets(ds, loss_name):
    if loss_name == "cross_entropy":
        if ds.labels is None:
            raise DataError("cross-entropy training needs class labels")
        return ds.labels
    if ds.targets is not None:
        return ds.targets
    # mse against one-hot labels
    return np.eye(ds.num_classes)[ds.labels]


def evaluate(net: Network, ds, loss: str = "cross_entropy", batch_size: int = 1024) -> tuple[float, float | None]:
    """Mean loss and (for labelled data) accuracy of ``net`` on ``ds``."""
    loss_fn = LOSSES[loss]
    targets = _targets(ds, loss)
    n = ds.inputs.shape[0]
    total = 0.0
    correct = 0
    for start in range(0, n, batch_size):
        sl = slice(start, start + batch_size)
        out = net.forward(ds.inputs[sl])
        batch_loss, _ = loss_fn(out, targets[sl])
        total += batch_loss * out.shape[0]
        if ds.labels is not None:
            correct += int(np.sum(np.argmax(out, axis=1) == ds.labels[sl]))
    accuracy = correct / n if ds.labels is not None else None
    return total / n, accuracy


def train(
    net: Network,
    data,
    cfg: TrainConfig,
    val=None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> list[EpochRecord]:
    """Mini-batch training; evaluates on ``val`` (or ``data``) after each epoch.

    Batches are drawn from a permutation seeded by ``(cfg.seed, epoch)``.
    Raises :class:`NumericError` as soon as a batch loss is not finite.
    """
    if data.inputs.shape[1] != net.in_dim:
        raise ShapeError(f"dataset has {data.inputs.shape[1]} features, network expects {net.in_dim}")
    val = data if val is None else val
    loss_fn = LOSSES[cfg.loss]
    targets = _targets(data, cfg.loss)
    opt = cfg.make_optimizer()
    n = data.inputs.shape[0]
    records = []
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        running = 0.0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            out = net.forward(data.inputs[idx])
            batch_loss, grad = loss_fn(out, targets[idx])
            if not np.isfinite(batch_loss):
                max_p = net.max_abs_param()
                raise NumericError(
                    f"non-finite loss {batch_loss} at epoch {epoch}, batch {b} (max |param| = {max_p:.3e})",
                    epoch=epoch,
                    batch=b,
                    max_abs_param=max_p,
                )
            net.backward(grad)
            opt.step(net)
            running += batch_loss * len(idx)
        val_loss, val_acc = evaluate(net, val, cfg.loss)
        rec = EpochRecord(epoch, running / n, val_loss, val_acc, time.perf_counter() - t0)
        log.info("epoch %d train_loss %.5f val_loss %.5f val_acc %s", epoch, rec.train_loss, val_loss, val_acc)
        records.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
    return records


# ------------------------------------------------------------ model files
#
# Layout (little-endian):
#   b"KANF" | u32 version | u32 spec_json_len | spec json (utf-8, may be empty)
#   u32 layer_count, then per layer a u8 kind tag and a kind-specific block:
#     kan:       u32 in, u32 out, u8 family, u32 count, u32 order,
#                f64 lo, f64 hi, f64 bandwidth (0 for splines), f64[out*in*count]
#     layernorm: u32 dim, f64 epsilon, f64[dim] gain, f64[dim] bias
#     linear:    u32 in, u32 out, f64[out*in] weights, f64[out] bias

MAGIC = b"KANF"
FORMAT_VERSION = 1
_KIND_TAGS = {"kan": 1, "layernorm": 2, "linear": 3}
_FAMILY_TAGS = {"spline": 1, "rbf": 2}


def _f64(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def dumps(net: Network) -> bytes:
    buf = io.BytesIO()
    spec_json = json.dumps(net.spec.to_dict(), sort_keys=True).encode() if net.spec else b""
    buf.write(MAGIC + struct.pack("<II", FORMAT_VERSION, len(spec_json)) + spec_json)
    buf.write(struct.pack("<I", len(net.layers)))
    for layer in net.layers:
        buf.write(struct.pack("<B", _KIND_TAGS[layer.kind]))
        if isinstance(layer, KanLayer):
            basis = layer.basis
            bw = basis.bandwidth if isinstance(basis, GaussianRBFBasis) else 0.0
            order = basis.order if isinstance(basis, BSplineBasis) else 0
            buf.write(
                struct.pack(
                    "<IIBIIddd",
                    layer.in_dim,
                    layer.out_dim,
                    _FAMILY_TAGS[basis.family],
                    basis.count,
                    order,
                    basis.grid.lo,
                    basis.grid.hi,
                    bw,
                )
            )
            buf.write(_f64(layer.weights))
        elif isinstance(layer, LayerNorm):
            buf.write(struct.pack("<Id", layer.dim, layer.epsilon))
            buf.write(_f64(layer.params["gain"]) + _f64(layer.params["bias"]))
        else:
            buf.write(struct.pack("<II", layer.in_dim, layer.out_dim))
            buf.write(_f64(layer.params["weights"]) + _f64(layer.params["bias"]))
    return buf.getvalue()


def save(net: Network, path) -> None:
    Path(path).write_bytes(dumps(net))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated model file: need {n} bytes for {what} at offset {self.pos}, "
                              f"only {len(self.data) - self.pos} left")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def floats(self, count: int, what: str) -> np.ndarray:
        return np.frombuffer(self.take(8 * count, what), dtype="<f8").astype(np.float64)


def loads(data: bytes) -> Network:
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise FormatError("not a model file (bad magic)")
    version, spec_len = r.unpack("<II", "header")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported model format version {version} (expected {FORMAT_VERSION})")
    spec_raw = r.take(spec_len, "network spec")
    try:
        spec = NetworkSpec.from_dict(json.loads(spec_raw)) if spec_len else None
    except (ValueError, TypeError, KeyError) as exc:
        raise FormatError(f"corrupt network spec: {exc}") from None
    (n_layers,) = r.unpack("<I", "layer count")
    layers: list[Layer] = []
    tags = {v: k for k, v in _KIND_TAGS.items()}
    families = {v: k for k, v in _FAMILY_TAGS.items()}
    for i in range(n_layers):
        (tag,) = r.unpack("<B", f"layer {i} kind")
        kind = tags.get(tag)
        where = f"layer {i} ({kind})"
        try:
            if kind == "kan":
                d_in, d_out, fam, count, order, lo, hi, bw = r.unpack("<IIBIIddd", f"{where} header")
                if fam not in families:
                    raise FormatError(f"{where}: unknown basis family tag {fam}")
                if families[fam] == "spline":
                    basis = BSplineBasis(GridSpec(lo, hi, count - order, order))
                else:
                    basis = GaussianRBFBasis(GridSpec(lo, hi, count), bw)
                w = r.floats(d_out * d_in * count, f"{where} weights").reshape(d_out, d_in * count)
                layers.append(KanLayer(d_in, d_out, basis, weights=w))
            elif kind == "layernorm":
                dim, eps = r.unpack("<Id", f"{where} header")
                ln = LayerNorm(dim, eps)
                ln.params["gain"] = r.floats(dim, f"{where} gain")
                ln.params["bias"] = r.floats(dim, f"{where} bias")
                layers.append(ln)
            elif kind == "linear":
                d_in, d_out = r.unpack("<II", f"{where} header")
                w = r.floats(d_out * d_in, f"{where} weights").reshape(d_out, d_in)
                b = r.floats(d_out, f"{where} bias")
                layers.append(LinearLayer(d_in, d_out, weights=w, bias=b))
            else:
                raise FormatError(f"layer {i}: unknown kind tag {tag}")
        except FormatError:
            raise
        except (ConfigError, ShapeError, ValueError) as exc:
            raise FormatError(f"{where}: {exc}") from None
    if r.pos != len(data):
        raise FormatError(f"{len(data) - r.pos} trailing bytes after last layer")
    try:
        return Network(layers, spec)
    except ConfigError as exc:
        raise FormatError(f"shape mismatch: {exc}") from None


def load(path) -> Network:
    return loads(Path(path).read_bytes())
