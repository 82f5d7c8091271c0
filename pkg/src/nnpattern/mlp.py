"""Small feed-forward classifier trained with Nesterov momentum.

Hidden layers use leaky ReLU, the output layer a softmax, and the loss is
the mean negative log-likelihood of the true class. All parameters live in
one flat float64 vector so the optimizer updates are single array ops;
per-layer weight matrices and bias vectors are views into it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .seqgen import BINARY_MAP


class TrainingDiverged(RuntimeError):
    """Training loss became non-finite or ended above its starting value."""


@dataclass
class MlpModel:
    layer_sizes: tuple[int, ...]
    params: np.ndarray
    leaky_slope: float = 0.01
    seed: int = 0
    input_shift: float = 0.0
    input_scale: float = 1.0

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        if len(self.layer_sizes) < 2:
            raise ValueError("need at least an input and an output layer")
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.params.size != n_params(self.layer_sizes):
            raise ValueError(
                f"expected {n_params(self.layer_sizes)} parameters, got {self.params.size}"
            )

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_classes(self) -> int:
        return self.layer_sizes[-1]

    @property
    def weights(self) -> list[np.ndarray]:
        return [w for w, _ in unpack(self.params, self.layer_sizes)]

    @property
    def biases(self) -> list[np.ndarray]:
        return [b for _, b in unpack(self.params, self.layer_sizes)]

    def copy(self) -> "MlpModel":
        return replace(self, params=self.params.copy())


@dataclass
class WindowedDataset:
    """Length-L windows over a sample stream, each labelled by its centre symbol.

    ``windows`` is a strided view into ``samples``; nothing is copied until a
    batch is drawn, which keeps 2**19-window training sets cheap.
    """

    samples: np.ndarray
    labels: np.ndarray
    L: int
    first_start: int
    stride: int

    @property
    def center_offset(self) -> int:
        return (self.L - 1) // 2

    @property
    def windows(self) -> np.ndarray:
        view = np.lib.stride_tricks.sliding_window_view(self.samples, self.L)
        return view[self.first_start :: self.stride][: len(self.labels)]

    def __len__(self) -> int:
        return int(self.labels.size)

    def batch(self, idx) -> tuple[np.ndarray, np.ndarray]:
        return self.windows[idx], self.labels[idx]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 64
    epochs: int = 10  # passes over the training windows
    rng_seed: int = 0
    lr_decay: float = 0.5
    decay_fraction: float = 0.25

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")


def n_params(layer_sizes: Sequence[int]) -> int:
    return sum((a + 1) * b for a, b in zip(layer_sizes[:-1], layer_sizes[1:]))


def unpack(flat: np.ndarray, layer_sizes: Sequence[int]) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split a flat parameter vector into per-layer ``(W, b)`` views."""
    out = []
    pos = 0
    for a, b in zip(layer_sizes[:-1], layer_sizes[1:]):
        w = flat[pos : pos + a * b].reshape(a, b)
        pos += a * b
        out.append((w, flat[pos : pos + b]))
        pos += b
    return out


def init_model(layer_sizes: Sequence[int], seed: int = 0, leaky_slope: float = 0.01) -> MlpModel:
    """He-initialised weights (std ``sqrt(2 / fan_in)``), zero biases."""
    layer_sizes = tuple(int(s) for s in layer_sizes)
    params = np.zeros(n_params(layer_sizes))
    rng = np.random.Generator(np.random.PCG64(seed))
    for w, _ in unpack(params, layer_sizes):
        w[...] = rng.standard_normal(w.shape) * math.sqrt(2.0 / w.shape[0])
    return MlpModel(layer_sizes, params, leaky_slope, seed)


def topology(n_inputs: int, hidden: Sequence[int], n_classes: int) -> tuple[int, ...]:
    return (n_inputs, *hidden, n_classes)


def make_windows(received, labels, L: int, stride: int = 1) -> WindowedDataset:
    """Build centred windows; the label of symbol ``j`` sits at sample ``j * stride``.

    Windows that would run past either end of `received` are dropped.
    """
    samples = np.ascontiguousarray(received, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if L % 2 == 0:
        raise ValueError(f"window length must be odd, got {L}")
    if L < 1 or L > samples.size:
        raise ValueError(f"window length {L} does not fit {samples.size} samples")
    half = (L - 1) // 2
    j_first = -(-half // stride)
    j_last = min((samples.size - 1 - half) // stride, labels.size - 1)
    if j_last < j_first:
        raise ValueError("no complete window fits")
    return WindowedDataset(samples, labels[j_first : j_last + 1], L, j_first * stride - half, stride)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _normalize(model: MlpModel, x: np.ndarray) -> np.ndarray:
    if model.input_shift == 0.0 and model.input_scale == 1.0:
        return np.asarray(x, dtype=np.float64)
    return (np.asarray(x, dtype=np.float64) - model.input_shift) / model.input_scale


def logits(model: MlpModel, x: np.ndarray, params: Optional[np.ndarray] = None) -> np.ndarray:
    layers = unpack(model.params if params is None else params, model.layer_sizes)
    a = _normalize(model, x)
    slope = model.leaky_slope
    for w, b in layers[:-1]:
        z = a @ w + b
        a = np.where(z > 0, z, slope * z)
    w, b = layers[-1]
    return a @ w + b


def forward(model: MlpModel, x: np.ndarray) -> np.ndarray:
    """Class probabilities for one window (1-D) or a batch of windows (2-D)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.n_inputs:
        raise ValueError(f"window length {x.shape[-1]} != model input size {model.n_inputs}")
    return _softmax(logits(model, x))


def _nll(z: np.ndarray, y: np.ndarray) -> np.ndarray:
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    return lse - z[np.arange(y.size), y]


def batch_loss(model: MlpModel, x: np.ndarray, y: np.ndarray, params: Optional[np.ndarray] = None) -> float:
    return float(np.mean(_nll(logits(model, x, params), np.asarray(y))))


def loss(model: MlpModel, dataset: WindowedDataset, chunk: int = 1 << 15) -> float:
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    total = 0.0
    for s in range(0, len(dataset), chunk):
        x, y = dataset.batch(slice(s, s + chunk))
        total += float(np.sum(_nll(logits(model, x), y)))
    return total / len(dataset)


def gradient(model: MlpModel, x: np.ndarray, y: np.ndarray, params: Optional[np.ndarray] = None):
    """Mean loss and its gradient with respect to the flat parameter vector."""
    params = model.params if params is None else params
    layers = unpack(params, model.layer_sizes)
    slope = model.leaky_slope
    y = np.asarray(y)
    n = y.size

    acts = [_normalize(model, x)]
    zs = []
    for w, b in layers[:-1]:
        z = acts[-1] @ w + b
        zs.append(z)
        acts.append(np.where(z > 0, z, slope * z))
    w, b = layers[-1]
    out = acts[-1] @ w + b
    p = _softmax(out)
    value = float(np.mean(-np.log(np.maximum(p[np.arange(n), y], 1e-300))))

    grad = np.empty_like(params)
    glayers = unpack(grad, model.layer_sizes)
    delta = p
    delta[np.arange(n), y] -= 1.0
    delta /= n
    for k in range(len(layers) - 1, -1, -1):
        gw, gb = glayers[k]
        np.matmul(acts[k].T, delta, out=gw)
        gb[...] = delta.sum(axis=0)
        if k:
            delta = delta @ layers[k][0].T
            delta *= np.where(zs[k - 1] > 0, 1.0, slope)
    return value, grad


def fit_normalization(model: MlpModel, dataset: WindowedDataset) -> MlpModel:
    """Freeze a zero-mean, unit-variance input map from the training samples."""
    samples = dataset.samples
    std = float(np.std(samples))
    return replace(
        model,
        params=model.params.copy(),
        input_shift=float(np.mean(samples)),
        input_scale=std if std > 0 else 1.0,
    )


def train_nesterov(
    model: MlpModel,
    dataset: WindowedDataset,
    cfg: TrainConfig,
    normalize: bool = True,
    history: Optional[list] = None,
) -> MlpModel:
    """Mini-batch training with Nesterov accelerated gradient.

    Each step evaluates the gradient at the look-ahead point ``w + mu * v``,
    then ``v <- mu * v - lr * g`` and ``w <- w + v``. The learning rate is
    multiplied by ``lr_decay`` after every ``decay_fraction`` of all steps.
    If `history` is given, the mean batch loss of every epoch is appended.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if dataset.L != model.n_inputs:
        raise ValueError(f"dataset window {dataset.L} != model input size {model.n_inputs}")
    model = fit_normalization(model, dataset) if normalize else model.copy()
    rng = np.random.Generator(np.random.PCG64(cfg.rng_seed))
    n = len(dataset)
    windows, labels = dataset.windows, dataset.labels
    steps_per_epoch = -(-n // cfg.batch_size)
    total_steps = steps_per_epoch * cfg.epochs
    decay_every = max(1, int(total_steps * cfg.decay_fraction))

    probe = rng.permutation(n)[: min(n, 4096)]
    initial = batch_loss(model, windows[probe], labels[probe])

    w = model.params
    v = np.zeros_like(w)
    mu = cfg.momentum
    step = 0
    epoch_loss = initial
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        running = 0.0
        for s in range(0, n, cfg.batch_size):
            idx = order[s : s + cfg.batch_size]
            lr = cfg.learning_rate * cfg.lr_decay ** (step // decay_every)
            value, g = gradient(model, windows[idx], labels[idx], w + mu * v if mu else w)
            if not math.isfinite(value):
                raise TrainingDiverged(f"non-finite loss at step {step}")
            v *= mu
            v -= lr * g
            w += v
            running += value * idx.size
            step += 1
        epoch_loss = running / n
        if history is not None:
            history.append(epoch_loss)
    if not np.all(np.isfinite(w)):
        raise TrainingDiverged("non-finite parameters after training")
    final = batch_loss(model, windows[probe], labels[probe])
    if not final <= initial:
        raise TrainingDiverged(f"loss rose from {initial:.4g} to {final:.4g}")
    return model


def numeric_gradient(model: MlpModel, x: np.ndarray, y: np.ndarray, step: float = 1e-5) -> np.ndarray:
    base = model.params
    g = np.empty_like(base)
    p = base.copy()
    for i in range(base.size):
        p[i] = base[i] + step
        up = batch_loss(model, x, y, p)
        p[i] = base[i] - step
        down = batch_loss(model, x, y, p)
        p[i] = base[i]
        g[i] = (up - down) / (2.0 * step)
    return g


def gradient_check(model: MlpModel, x: np.ndarray, y: np.ndarray, step: float = 1e-5, floor: float = 1e-4) -> float:
    """Max relative deviation between backprop and central differences.

    Relative error is ``|a - n| / max(|a|, |n|, floor)``; the floor keeps
    near-zero components, where round-off dominates, from blowing up the ratio.
    """
    analytic = gradient(model, x, y)[1]
    numeric = numeric_gradient(model, x, y, step)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def predict(model: MlpModel, windows: np.ndarray, chunk: int = 1 << 14) -> np.ndarray:
    """Argmax class per window; ties go to the lowest index."""
    out = np.empty(windows.shape[0], dtype=np.int64)
    for s in range(0, windows.shape[0], chunk):
        out[s : s + chunk] = np.argmax(logits(model, windows[s : s + chunk]), axis=1)
    return out


def symbol_bit_errors(decided: np.ndarray, sent: np.ndarray, bit_map: Mapping[int, tuple[int, ...]]) -> tuple[int, int]:
    """Bit errors and bits counted when symbols are compared through `bit_map`."""
    table = np.array([bit_map[s] for s in range(len(bit_map))], dtype=np.uint8)
    errors = int(np.count_nonzero(table[decided] != table[sent]))
    return errors, int(sent.size * table.shape[1])


def classify_ber(model: MlpModel, dataset: WindowedDataset, bit_map: Mapping[int, tuple[int, ...]] = BINARY_MAP):
    """Returns ``(ber, bit_errors, bits_counted)``."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    decided = predict(model, dataset.windows)
    errors, bits = symbol_bit_errors(decided, dataset.labels, bit_map)
    return errors / bits, errors, bits


def save_model(model: MlpModel, path) -> None:
    """Plain-text format: one header line, then one parameter per line (repr, round-trip exact)."""
    sizes = ",".join(str(s) for s in model.layer_sizes)
    lines = [
        f"mlp layers={sizes} slope={model.leaky_slope!r} seed={model.seed} "
        f"shift={model.input_shift!r} scale={model.input_scale!r}"
    ]
    lines.extend(repr(float(v)) for v in model.params)
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path) -> MlpModel:
    lines = Path(path).read_text().split("\n")
    head = lines[0].split()
    if not head or head[0] != "mlp":
        raise ValueError(f"{path}: not a model file")
    meta = dict(item.split("=", 1) for item in head[1:])
    sizes = tuple(int(s) for s in meta["layers"].split(","))
    params = np.array([float(v) for v in lines[1:] if v.strip()])
    return MlpModel(
        sizes,
        params,
        float(meta["slope"]),
        int(meta["seed"]),
        float(meta["shift"]),
        float(meta["scale"]),
    )
