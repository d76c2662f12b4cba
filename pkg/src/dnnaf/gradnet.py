"""Feed-forward network mapping a filter residual to a density derivative.

The default topology is ``1 -> 32 -> 16 -> 8 -> 4 -> 1`` with tanh hidden
units and an affine output. Inputs and targets are z-scored with statistics of
the training split; :meth:`GradientNet.forward` undoes the target scaling so
callers always see derivative values in the original units.

Model file format (text, version 1)::

    dnnaf-gradnet 1
    layer_dims 1 32 16 8 4 1
    activation tanh
    input_scaler <mean> <std>
    target_scaler <mean> <std>
    clamp <value or none>
    trained <0 or 1>
    layer <k> w <out*in row-major entries> b <out entries>
    ...

All reals are written with 17 significant digits, which round-trips doubles.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError, ParameterError, TrainingDivergedError
from .kde import GradientDataset
from .rng import make_rng

DEFAULT_DIMS = (1, 32, 16, 8, 4, 1)
FORMAT_MAGIC = "dnnaf-gradnet"
FORMAT_VERSION = 1

ACTIVATIONS = {
    "tanh": (np.tanh, lambda a: 1.0 - a * a),
    "relu": (lambda z: np.maximum(z, 0.0), lambda a: (a > 0.0).astype(float)),
}


def _g(x: float) -> str:
    return format(float(x), ".17g")


@dataclass
class GradientNet:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"
    input_scaler: tuple[float, float] = (0.0, 1.0)
    target_scaler: tuple[float, float] = (0.0, 1.0)
    clamp: float | None = None
    trained: bool = False

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ParameterError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ParameterError("need one bias vector per weight matrix")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ParameterError(f"layer {k}: weight {w.shape} and bias {b.shape} disagree")
            if k and w.shape[1] != self.weights[k - 1].shape[0]:
                raise ParameterError(f"layer {k} input width does not match layer {k - 1}")
        for name in ("input_scaler", "target_scaler"):
            mean, std = (float(x) for x in getattr(self, name))
            if not std > 0:
                raise ParameterError(f"{name} std must be positive")
            setattr(self, name, (mean, std))

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    def hidden(self, x: np.ndarray) -> list[np.ndarray]:
        """Activations of every layer for standardized column input ``x``."""
        act, _ = ACTIVATIONS[self.activation]
        out = [x]
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = out[-1] @ w.T + b
            out.append(z if k == last else act(z))
        return out

    def forward(self, residual):
        """Estimated density derivative at ``residual`` (scalar or array)."""
        x = np.asarray(residual, dtype=float)
        if not np.all(np.isfinite(x)):
            raise InputError("network input must be finite")
        mx, sx = self.input_scaler
        my, sy = self.target_scaler
        y = self.hidden(((x.reshape(-1) - mx) / sx)[:, None])[-1][:, 0] * sy + my
        if self.clamp is not None:
            y = np.clip(y, -self.clamp, self.clamp)
        return y.reshape(x.shape) if x.ndim else float(y[0])

    __call__ = forward

    def parameters(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def copy(self) -> "GradientNet":
        return copy.deepcopy(self)


def init_network(init_seed: int = 0, layer_dims=DEFAULT_DIMS, activation: str = "tanh") -> GradientNet:
    """Glorot-uniform weights from a seeded stream, zero biases, identity scalers."""
    rng = make_rng(init_seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return GradientNet(weights, biases, activation)


def forward(net: GradientNet, residual):
    return net.forward(residual)


def backprop(net: GradientNet, x: np.ndarray, y: np.ndarray):
    """Mean squared error and its parameter gradients on standardized data.

    Returns ``(loss, grads)`` with ``grads`` ordered like ``net.parameters()``.
    """
    _, dact = ACTIVATIONS[net.activation]
    acts = net.hidden(x.reshape(-1, 1))
    resid = acts[-1][:, 0] - y
    loss = float(np.mean(resid * resid))
    delta = (2.0 / resid.size) * resid[:, None]
    grads = []
    for k in range(len(net.weights) - 1, -1, -1):
        grads.append(delta.sum(axis=0))
        grads.append(delta.T @ acts[k])
        if k:
            delta = (delta @ net.weights[k]) * dact(acts[k])
    return loss, grads[::-1]


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    epochs: int = 100
    batch_size: int = 50
    shuffle_seed: int = 0
    init_seed: int = 0
    holdout_fraction: float = 0.1
    clamp_factor: float | None = 3.0

    def validate(self, n: int) -> None:
        if not self.learning_rate > 0:
            raise ParameterError("learning_rate must be positive")
        if self.epochs < 1:
            raise ParameterError("epochs must be >= 1")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ParameterError("holdout_fraction must lie in [0, 1)")
        if not 1 <= self.batch_size <= n:
            raise ParameterError(f"batch_size must lie in [1, {n}]")


@dataclass
class TrainReport:
    per_epoch_loss: np.ndarray
    final_holdout_r2: float
    final_train_r2: float
    train_index: np.ndarray = field(repr=False, default=None)
    holdout_index: np.ndarray = field(repr=False, default=None)


def r_squared(pred: np.ndarray, target: np.ndarray) -> float:
    ss_res = float(np.sum((target - pred) ** 2))
    ss_tot = float(np.sum((target - np.mean(target)) ** 2))
    return 1.0 - ss_res / ss_tot if ss_tot > 0 else float("nan")


def _fit_scaler(x: np.ndarray) -> tuple[float, float]:
    std = float(np.std(x))
    return float(np.mean(x)), std if std > 0 else 1.0


def split_indices(n: int, cfg: TrainConfig) -> tuple[np.ndarray, np.ndarray]:
    perm = make_rng(cfg.shuffle_seed).permutation(n)
    n_hold = int(round(cfg.holdout_fraction * n))
    return np.sort(perm[n_hold:]), np.sort(perm[:n_hold])


def train(net: GradientNet, data: GradientDataset, cfg: TrainConfig | None = None):
    """Plain mini-batch SGD on the mean squared error of standardized pairs.

    The dataset is split 90/10 by a shuffled index; scalers come from the
    training split only. Returns ``(trained_net, report)``; ``net`` is left
    untouched.
    """
    cfg = cfg or TrainConfig()
    if len(data) == 0:
        raise ParameterError("empty training set")
    train_idx, hold_idx = split_indices(len(data), cfg)
    cfg.validate(train_idx.size)

    net = net.copy()
    net.input_scaler = _fit_scaler(data.inputs[train_idx])
    net.target_scaler = _fit_scaler(data.targets[train_idx])
    net.clamp = None
    (mx, sx), (my, sy) = net.input_scaler, net.target_scaler
    x = (data.inputs - mx) / sx
    y = (data.targets - my) / sy
    xt, yt = x[train_idx], y[train_idx]

    # shuffling stream continues after the split permutation
    rng = make_rng(cfg.shuffle_seed)
    rng.permutation(len(data))
    params = net.parameters()
    losses = np.empty(cfg.epochs)
    for epoch in range(cfg.epochs):
        order = rng.permutation(train_idx.size)
        for start in range(0, order.size, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            _, grads = backprop(net, xt[batch], yt[batch])
            for p, g in zip(params, grads):
                p -= cfg.learning_rate * g
        out = net.hidden(xt[:, None])[-1][:, 0]
        losses[epoch] = np.mean((out - yt) ** 2)
        if not np.isfinite(losses[epoch]) or not all(np.all(np.isfinite(p)) for p in params):
            raise TrainingDivergedError(epoch, float(losses[epoch]))

    if cfg.clamp_factor is not None:
        net.clamp = float(cfg.clamp_factor * np.max(np.abs(data.targets[train_idx])))
    net.trained = True
    holdout_r2 = (
        r_squared(net.forward(data.inputs[hold_idx]), data.targets[hold_idx])
        if hold_idx.size > 1
        else float("nan")
    )
    train_r2 = r_squared(net.forward(data.inputs[train_idx]), data.targets[train_idx])
    return net, TrainReport(losses, holdout_r2, train_r2, train_idx, hold_idx)


def _loss_extended(net: GradientNet, x: np.ndarray, y: np.ndarray) -> np.longdouble:
    act, _ = ACTIVATIONS[net.activation]
    h = x.astype(np.longdouble).reshape(-1, 1)
    last = len(net.weights) - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w.astype(np.longdouble).T + b.astype(np.longdouble)
        h = z if k == last else act(z)
    r = h[:, 0] - y.astype(np.longdouble)
    return np.mean(r * r)


def gradient_check(
    net: GradientNet,
    data: GradientDataset,
    probes: int = 100,
    seed: int = 0,
    eps: float = 1e-6,
    max_points: int = 256,
    grad_fn=backprop,
) -> float:
    """Largest relative gap between ``grad_fn`` and central differences.

    Probed parameters are drawn without replacement (with replacement once
    ``probes`` exceeds the parameter count). The loss is the training loss:
    data are standardized with the net's scalers once trained, otherwise with
    their own statistics. Finite-difference losses are evaluated in extended
    precision so the oracle's rounding stays well below the tolerance even on
    tiny gradient entries. A probe where both gradients vanish counts as exact.
    """
    if probes < 1:
        raise ParameterError("probes must be >= 1")
    rng = make_rng(seed)
    pick = rng.permutation(len(data))[:max_points]
    if net.trained:
        (mx, sx), (my, sy) = net.input_scaler, net.target_scaler
    else:
        (mx, sx), (my, sy) = _fit_scaler(data.inputs), _fit_scaler(data.targets)
    x = (data.inputs[pick] - mx) / sx
    y = (data.targets[pick] - my) / sy

    net = net.copy()
    params = net.parameters()
    _, grads = grad_fn(net, x, y)
    sizes = np.array([p.size for p in params])
    total = int(sizes.sum())
    flat_ids = rng.choice(total, size=probes, replace=probes > total)
    offsets = np.concatenate(([0], np.cumsum(sizes)))

    worst = 0.0
    for flat in flat_ids:
        k = int(np.searchsorted(offsets, flat, side="right") - 1)
        idx = np.unravel_index(int(flat - offsets[k]), params[k].shape)
        saved = params[k][idx]
        params[k][idx] = saved + eps
        up = _loss_extended(net, x, y)
        params[k][idx] = saved - eps
        down = _loss_extended(net, x, y)
        params[k][idx] = saved
        numeric = float((up - down) / (2 * np.longdouble(eps)))
        analytic = float(grads[k][idx])
        scale = max(abs(numeric), abs(analytic))
        if scale > 0.0:
            worst = max(worst, abs(numeric - analytic) / scale)
    return worst


def save_model(net: GradientNet, path) -> None:
    scaler = lambda s: f"{_g(s[0])} {_g(s[1])}"  # noqa: E731
    lines = [
        f"{FORMAT_MAGIC} {FORMAT_VERSION}",
        "layer_dims " + " ".join(str(d) for d in net.layer_dims),
        f"activation {net.activation}",
        f"input_scaler {scaler(net.input_scaler)}",
        f"target_scaler {scaler(net.target_scaler)}",
        f"clamp {'none' if net.clamp is None else _g(net.clamp)}",
        f"trained {int(net.trained)}",
    ]
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        lines.append(
            f"layer {k} w " + " ".join(map(_g, w.ravel())) + " b " + " ".join(map(_g, b))
        )
    Path(path).write_text("\n".join(lines) + "\n")


def _floats(tokens: list[str], field_name: str) -> list[float]:
    try:
        values = [float(t) for t in tokens]
    except ValueError:
        raise FormatError("non-numeric entry", field=field_name) from None
    if not all(np.isfinite(values)):
        raise FormatError("non-finite entry", field=field_name)
    return values


def load_model(path) -> GradientNet:
    lines = Path(path).read_text().splitlines()
    expected = ["header", "layer_dims", "activation", "input_scaler", "target_scaler", "clamp", "trained"]
    if len(lines) < len(expected):
        raise FormatError("file is truncated", field=expected[len(lines)] if lines else "header")
    head = lines[0].split()
    if head != [FORMAT_MAGIC, str(FORMAT_VERSION)]:
        raise FormatError(f"unsupported header {lines[0]!r}", field="header")
    rows = {}
    for name, line in zip(expected[1:], lines[1:7]):
        tokens = line.split()
        if not tokens or tokens[0] != name:
            raise FormatError(f"expected '{name}' line", field=name)
        rows[name] = tokens[1:]
    try:
        dims = [int(t) for t in rows["layer_dims"]]
    except ValueError:
        raise FormatError("non-integer width", field="layer_dims") from None
    if len(dims) < 2 or min(dims) < 1:
        raise FormatError("need at least two positive widths", field="layer_dims")
    scalers = {}
    for name in ("input_scaler", "target_scaler"):
        vals = _floats(rows[name], name)
        if len(vals) != 2 or not vals[1] > 0:
            raise FormatError("expected '<mean> <positive std>'", field=name)
        scalers[name] = tuple(vals)
    if len(rows["clamp"]) != 1:
        raise FormatError("expected one value", field="clamp")
    clamp = None if rows["clamp"][0] == "none" else _floats(rows["clamp"], "clamp")[0]
    if rows["trained"] not in (["0"], ["1"]):
        raise FormatError("expected 0 or 1", field="trained")
    if len(rows["activation"]) != 1 or rows["activation"][0] not in ACTIVATIONS:
        raise FormatError("unknown activation", field="activation")

    layer_lines = lines[7:]
    if len(layer_lines) != len(dims) - 1:
        raise FormatError(
            f"expected {len(dims) - 1} layer lines, found {len(layer_lines)}", field="layer"
        )
    weights, biases = [], []
    for k, line in enumerate(layer_lines):
        name = f"layer {k}"
        tokens = line.split()
        n_in, n_out = dims[k], dims[k + 1]
        if tokens[:3] != ["layer", str(k), "w"] or "b" not in tokens:
            raise FormatError("malformed layer line", field=name)
        split = tokens.index("b")
        w = _floats(tokens[3:split], name)
        b = _floats(tokens[split + 1 :], name)
        if len(w) != n_in * n_out or len(b) != n_out:
            raise FormatError(f"expected {n_out}x{n_in} weights and {n_out} biases", field=name)
        weights.append(np.array(w).reshape(n_out, n_in))
        biases.append(np.array(b))
    return GradientNet(
        weights,
        biases,
        rows["activation"][0],
        scalers["input_scaler"],
        scalers["target_scaler"],
        clamp,
        rows["trained"] == ["1"],
    )
