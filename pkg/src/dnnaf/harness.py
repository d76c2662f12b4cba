"""Seeded Monte Carlo system-identification experiments.

Every trial owns three Philox streams derived from its trial seed: Gaussian
regressors ``u_i ~ N(0, sigma_u^2 I)``, noise ``v_i`` and the initial weights
``w_0 ~ N(0, I/M)``. All algorithms of an experiment replay the same streams,
so comparisons are paired. Trials are simulated in fixed blocks whose layout
depends only on the trial count, never on the number of worker threads.

Deviation trajectories record ``||w_o - w_i||^2`` *before* update ``i``, so
index 0 is the initial deviation.
"""

from __future__ import annotations

import math
import re
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, FormatError, NotConvergedError, ParameterError
from .filters import ALGORITHMS, DNNAF, MCC, MEE, AdaptiveFilter
from .noise import NoiseModel, draw, parse_model
from .rng import derive_seed, make_rng, standard_normal

BLOCK = 25
STEADY_FRACTION = 0.1
MAX_RISE_DB_PER_100 = 0.01


@dataclass
class AlgorithmSpec:
    """Recipe for one filter; ``build`` instantiates it on given initial weights."""

    kind: str
    step_size: float = 0.01
    kernel_width: float | None = None
    window: int | None = None
    net: object = field(default=None, repr=False)
    pretrain_step_size: float | None = None
    pretrain_len: float | None = None
    label: str | None = None

    def __post_init__(self):
        if self.kind not in ALGORITHMS:
            raise ParameterError(
                f"unknown algorithm {self.kind!r}; valid names: {', '.join(ALGORITHMS)}"
            )

    @property
    def name(self) -> str:
        return self.label or self.kind

    def build(self, w0, pretrain_len: float = 500) -> AdaptiveFilter:
        if self.kind == "mcc":
            return MCC(w0, self.step_size, self.kernel_width or 2.0)
        if self.kind == "mee":
            return MEE(w0, self.step_size, self.window or 10, self.kernel_width or 1.0)
        if self.kind == "dnnaf":
            if self.net is None:
                raise ConfigurationError("DNN-AF needs a gradient model")
            l = pretrain_len if self.pretrain_len is None else self.pretrain_len
            return DNNAF(w0, self.step_size, self.net, l, self.pretrain_step_size)
        return ALGORITHMS[self.kind](w0, self.step_size)

    def describe(self) -> str:
        parts = [f"eta={self.step_size!r}"]
        if self.kernel_width is not None:
            parts.append(f"sigma={self.kernel_width!r}")
        if self.window is not None:
            parts.append(f"L={self.window}")
        if self.pretrain_step_size is not None:
            parts.append(f"pretrain_eta={self.pretrain_step_size!r}")
        if self.pretrain_len is not None:
            parts.append(f"pretrain_len={self.pretrain_len!r}")
        return f"{self.name}:{self.kind}(" + ";".join(parts) + ")"


@dataclass
class ExperimentConfig:
    noise: NoiseModel
    algorithms: list[AlgorithmSpec]
    M: int = 5
    sigma_u: float = 1.0
    w_o: np.ndarray | None = None
    iterations: int = 5000
    trials: int = 100
    pretrain_len: float = 500
    master_seed: int = 0

    def __post_init__(self):
        if self.trials < 1 or self.iterations < 1 or self.M < 1:
            raise ParameterError("trials, iterations and M must all be >= 1")
        if not self.sigma_u > 0:
            raise ParameterError("sigma_u must be positive")
        if self.w_o is not None:
            self.w_o = np.array(self.w_o, dtype=float)
            if self.w_o.shape != (self.M,):
                raise ParameterError(f"w_o must have length M={self.M}")
        names = [a.name for a in self.algorithms]
        if len(set(names)) != len(names):
            raise ParameterError(f"algorithm labels must be unique: {names}")

    def target(self) -> np.ndarray:
        """The unknown system; unit-norm and seed-derived unless given."""
        if self.w_o is not None:
            return self.w_o
        w = standard_normal(make_rng(derive_seed(self.master_seed, 0)), self.M)
        return w / np.linalg.norm(w)

    def trial_seed(self, k: int) -> int:
        return derive_seed(self.master_seed, 1, k)

    def header(self) -> dict[str, str]:
        meta = {
            "noise": self.noise.descriptor(),
            "M": str(self.M),
            "sigma_u": repr(float(self.sigma_u)),
            "w_o": " ".join(repr(float(x)) for x in self.target()),
            "iterations": str(self.iterations),
            "trials": str(self.trials),
            "pretrain_len": repr(self.pretrain_len),
            "master_seed": str(self.master_seed),
        }
        for k, spec in enumerate(self.algorithms):
            meta[f"algorithm{k}"] = spec.describe()
        return meta


@dataclass
class TrialStreams:
    inputs: np.ndarray  # (iterations, M)
    noise: np.ndarray  # (iterations,)
    w0: np.ndarray  # (M,)


def trial_streams(cfg: ExperimentConfig, trial_seed: int) -> TrialStreams:
    cu, cv, cw = np.random.SeedSequence(trial_seed).spawn(3)
    u = cfg.sigma_u * standard_normal(make_rng(cu), (cfg.iterations, cfg.M))
    v = draw(cfg.noise, cfg.iterations, make_rng(cv))
    w0 = standard_normal(make_rng(cw), cfg.M) / math.sqrt(cfg.M)
    return TrialStreams(u, v, w0)


def _simulate(cfg: ExperimentConfig, spec: AlgorithmSpec, streams: list[TrialStreams],
              record_residuals: bool = False):
    w_o = cfg.target()
    U = np.stack([s.inputs for s in streams], axis=1)
    V = np.stack([s.noise for s in streams], axis=1)
    D = np.sum(U * w_o, axis=-1) + V
    filt = spec.build(np.stack([s.w0 for s in streams]), cfg.pretrain_len)
    dev = np.empty((len(streams), cfg.iterations))
    res = np.empty((len(streams), cfg.iterations)) if record_residuals else None
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(cfg.iterations):
            diff = w_o - filt.w
            dev[:, i] = np.sum(diff * diff, axis=-1)
            e = filt.update(U[i], D[i])
            if res is not None:
                res[:, i] = e
    for t in np.flatnonzero(filt.diverged):
        dev[t, filt.diverged_at[t] + 1 :] = np.nan
    return dev, filt.diverged_at.copy(), res


@dataclass
class TrialResult:
    deviation: np.ndarray
    diverged: bool
    diverged_at: int
    residuals: np.ndarray | None = None


def run_trial(cfg: ExperimentConfig, spec: AlgorithmSpec, trial_seed: int,
              record_residuals: bool = False) -> TrialResult:
    """One trial; a diverged trajectory is truncated after the last finite step."""
    dev, at, res = _simulate(cfg, spec, [trial_streams(cfg, trial_seed)], record_residuals)
    n = at[0] + 1 if at[0] >= 0 else cfg.iterations
    return TrialResult(dev[0, :n], bool(at[0] >= 0), int(at[0]),
                       None if res is None else res[0, :n])


def dump_trajectory(result: TrialResult, path) -> None:
    """Write ``iteration,residual,deviation`` rows for one recorded trial."""
    if result.residuals is None:
        raise ParameterError("trial was run without record_residuals=True")
    lines = ["iteration,residual,deviation"]
    lines += [f"{i},{e!r},{d!r}" for i, (e, d) in
              enumerate(zip(result.residuals.tolist(), result.deviation.tolist()))]
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass
class MsdCurve:
    label: str
    msd_linear: np.ndarray
    msd_db: np.ndarray
    diverged_trials: int
    trials: int

    @classmethod
    def from_linear(cls, label, msd_linear, diverged_trials, trials):
        msd_linear = np.asarray(msd_linear, dtype=float)
        with np.errstate(divide="ignore"):
            msd_db = np.where(msd_linear > 0, 10.0 * np.log10(msd_linear), -np.inf)
        return cls(label, msd_linear, msd_db, int(diverged_trials), int(trials))


def run_experiment(cfg: ExperimentConfig, threads: int = 1) -> list[MsdCurve]:
    """Average deviation curves over trials for every configured algorithm.

    Diverged trials are excluded from the average and counted.
    """
    blocks = [range(s, min(s + BLOCK, cfg.trials)) for s in range(0, cfg.trials, BLOCK)]

    def work(block):
        streams = [trial_streams(cfg, cfg.trial_seed(k)) for k in block]
        return [_simulate(cfg, spec, streams)[:2] for spec in cfg.algorithms]

    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, blocks))
    else:
        results = [work(b) for b in blocks]

    curves = []
    for a, spec in enumerate(cfg.algorithms):
        dev = np.concatenate([r[a][0] for r in results])
        ok = np.concatenate([r[a][1] for r in results]) < 0
        n_div = int(cfg.trials - ok.sum())
        if ok.any():
            msd = np.sum(dev[ok], axis=0) / ok.sum()
        else:
            msd = np.empty(0)
        curves.append(MsdCurve.from_linear(spec.name, msd, n_div, cfg.trials))
    return curves


def tail_slope_db(values_db: np.ndarray) -> float:
    """Least-squares slope of a dB sequence, in dB per 100 iterations."""
    return _slope_and_error(values_db)[0]


def _slope_and_error(values_db) -> tuple[float, float]:
    """OLS slope (dB per 100 iterations) and its standard error.

    Neighbouring MSD values are strongly correlated, so the plain OLS error is
    inflated by the integrated autocorrelation time of the detrended
    residuals, summed up to the first non-positive lag.
    """
    y = np.asarray(values_db, dtype=float)
    x = np.arange(y.size, dtype=float)
    x -= x.mean()
    sxx = np.dot(x, x)
    beta = np.dot(x, y - y.mean()) / sxx
    resid = y - y.mean() - beta * x
    var = np.dot(resid, resid) / max(y.size - 2, 1)
    tau = 1.0
    if var > 0 and y.size > 3:
        spec = np.fft.rfft(resid, 2 * y.size)
        acf = np.fft.irfft(spec * np.conj(spec))[: y.size]
        rho = acf / acf[0]
        stop = np.flatnonzero(rho[1:] <= 0)
        k = stop[0] + 1 if stop.size else y.size
        tau = 1.0 + 2.0 * float(np.sum(rho[1:k]))
    return float(100.0 * beta), float(100.0 * math.sqrt(var * tau / sxx))


def steady_state_of(curve: MsdCurve, fraction: float = STEADY_FRACTION,
                    max_rise: float = MAX_RISE_DB_PER_100) -> float:
    """Mean of the last ``fraction`` of the dB curve, once the tail has flattened.

    The tail counts as a plateau unless its fitted slope exceeds ``max_rise``
    dB per 100 iterations by more than two standard errors; the allowance
    keeps Monte Carlo wobble on a flat curve from reading as a trend.
    """
    db = np.asarray(curve.msd_db, dtype=float)
    if db.size < 10:
        raise NotConvergedError(f"{curve.label}: need at least 10 points, got {db.size}")
    tail = db[-max(2, int(round(fraction * db.size))):]
    if not np.all(np.isfinite(tail)):
        raise NotConvergedError(f"{curve.label}: tail contains non-finite values")
    slope, se = _slope_and_error(tail)
    if slope - 2.0 * se >= max_rise:
        raise NotConvergedError(
            f"{curve.label}: tail rises {slope:.4g} +- {se:.2g} dB per 100 iterations"
        )
    return float(np.mean(tail))


# -- step-size parity -------------------------------------------------------

def rate_coefficient(spec: AlgorithmSpec, noise: NoiseModel, n_mc: int = 200_000,
                     seed: int = 0) -> float:
    """Slope ``c`` of the linearized mean recursion ``E w~ <- (1 - eta sigma_u^2 c) E w~``.

    Evaluated by Monte Carlo over the noise model: ``c = E[-g'(v)]`` for
    updates of the form ``w~ <- w~ + eta u g(e)``; for MEE the pairwise form
    ``2 (L-1)/L E[G(dv) (1 - dv^2/sigma^2)] / sigma^2`` with ``dv = v1 - v2``.
    """
    rng = make_rng(seed)
    v = draw(noise, n_mc, rng)
    if spec.kind == "lms":
        return 1.0
    if spec.kind == "lmf":
        return 3.0 * float(np.mean(v * v))
    if spec.kind == "mcc":
        s = spec.kernel_width or 2.0
        return float(np.mean((1.0 - v * v / s**2) * np.exp(-0.5 * v * v / s**2)))
    if spec.kind == "mee":
        s, L = spec.kernel_width or 1.0, spec.window or 10
        dv = v - draw(noise, n_mc, rng)
        g = np.exp(-0.5 * dv * dv / s**2) / (math.sqrt(2 * math.pi) * s)
        return 2.0 * (L - 1) / L * float(np.mean(g * (1.0 - dv * dv / s**2))) / s**2
    if spec.net is None:
        raise ConfigurationError("DNN-AF needs a gradient model")
    h = 1e-4 * float(np.std(v))
    return float(np.mean(-(spec.net(v + h) - spec.net(v - h)) / (2.0 * h)))


def match_step_sizes(specs: list[AlgorithmSpec], noise: NoiseModel, reference_step: float,
                     n_mc: int = 200_000, seed: int = 0) -> list[AlgorithmSpec]:
    """Give every algorithm the linearized convergence rate of LMS at ``reference_step``.

    DNN-AF additionally warms up with LMS at ``reference_step`` so its first
    ``pretrain_len`` iterations coincide with the LMS curve. An algorithm whose
    rate coefficient is not positive has no mean restoring force around the
    true system under this noise; it keeps ``reference_step`` and a warning is
    issued.
    """
    tuned = []
    for spec in specs:
        c = rate_coefficient(spec, noise, n_mc, seed)
        extra = {"pretrain_step_size": reference_step} if spec.kind == "dnnaf" else {}
        if c > 0:
            step = reference_step / c
        else:
            warnings.warn(
                f"{spec.name}: rate coefficient {c:.4g} is not positive under "
                f"{noise.descriptor()}; using the reference step unmatched",
                stacklevel=2,
            )
            step = reference_step
        tuned.append(replace(spec, step_size=step, **extra))
    return tuned


def grid_search_kernel_width(cfg: ExperimentConfig, spec: AlgorithmSpec, widths,
                             reference_step: float, threads: int = 1):
    """Pick the MCC/MEE kernel width with the lowest steady-state MSD.

    Each candidate is rate-matched to LMS at ``reference_step`` before the
    comparison. Returns ``(best_width, {width: steady_state_db})``.
    """
    if spec.kind not in ("mcc", "mee"):
        raise ParameterError("kernel-width search applies to MCC and MEE only")
    scores = {}
    for width in widths:
        cand = match_step_sizes([replace(spec, kernel_width=float(width))], cfg.noise,
                                reference_step)
        curve = run_experiment(replace(cfg, algorithms=cand), threads)[0]
        try:
            scores[float(width)] = steady_state_of(curve)
        except NotConvergedError:
            scores[float(width)] = math.inf
    best = min(scores, key=scores.get)
    return best, scores


# -- files --------------------------------------------------------------------

def export_curves(curves: list[MsdCurve], path, cfg: ExperimentConfig | None = None,
                  extra: dict | None = None) -> None:
    """CSV with ``iteration`` and one ``<label>_db`` column per curve.

    Header comments record the configuration; empty (fully diverged) curves
    are written as ``nan`` columns.
    """
    meta = {} if cfg is None else cfg.header()
    meta.update(extra or {})
    for c in curves:
        meta[f"diverged[{c.label}]"] = f"{c.diverged_trials}/{c.trials}"
    n = max((c.msd_db.size for c in curves), default=0)
    cols = [c.msd_db.tolist() if c.msd_db.size else [math.nan] * n for c in curves]
    lines = [f"# {k}={v}" for k, v in meta.items()]
    lines.append(",".join(["iteration"] + [f"{c.label}_db" for c in curves]))
    for i in range(n):
        lines.append(",".join([str(i)] + [repr(col[i]) for col in cols]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_curves(path):
    """Parse :func:`export_curves` output into ``(meta, {label: msd_db})``."""
    meta, header, rows = {}, None, []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            meta[key] = value
        elif header is None:
            header = line.split(",")
            if header[0] != "iteration" or not all(h.endswith("_db") for h in header[1:]):
                raise FormatError(f"line {lineno}: bad column header", field="columns")
        else:
            parts = line.split(",")
            if len(parts) != len(header):
                raise FormatError(f"line {lineno}: expected {len(header)} columns", field="row")
            try:
                rows.append([float(x) for x in parts[1:]])
            except ValueError:
                raise FormatError(f"line {lineno}: bad number", field="row") from None
    if header is None:
        raise FormatError("no column header", field="columns")
    data = np.array(rows, dtype=float).reshape(-1, len(header) - 1)
    return meta, {h[:-3]: data[:, k] for k, h in enumerate(header[1:])}


def write_gnuplot_script(csv_path, labels, title: str = "") -> Path:
    csv_path = Path(csv_path)
    script = csv_path.with_suffix(".gp")
    plots = ", \\\n     ".join(
        f"'{csv_path.name}' using 1:{k + 2} with lines title '{label}'"
        for k, label in enumerate(labels)
    )
    script.write_text(
        "set datafile separator ','\n"
        "set datafile commentschars '#'\n"
        "set key autotitle columnhead\n"
        f"set title '{title}'\n"
        "set xlabel 'iteration'\nset ylabel 'MSD (dB)'\n"
        f"set terminal pngcairo size 900,600\nset output '{csv_path.stem}.png'\n"
        f"plot {plots}\n"
    )
    return script


_KEY = re.compile(r"^[A-Za-z_][A-Za-z0-9_.]*$")

CONFIG_KEYS = {
    "noise", "M", "sigma_u", "w_o", "iterations", "trials", "pretrain_len", "master_seed",
    "algorithms", "reference_step",
}
ALGO_KEYS = {"step_size", "kernel_width", "window", "model", "pretrain_step_size", "pretrain_len"}


def parse_config_text(text: str) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not _KEY.match(key):
            raise FormatError(f"line {lineno}: expected 'key = value'", field=key or "line")
        head, _, sub = key.partition(".")
        if sub:
            if head not in ALGORITHMS or sub not in ALGO_KEYS:
                raise FormatError(f"line {lineno}: unknown key {key!r}", field=key)
        elif key not in CONFIG_KEYS:
            raise FormatError(f"line {lineno}: unknown key {key!r}", field=key)
        out[key] = value
    return out


def config_from_mapping(values: dict[str, str], nets=None, **overrides):
    """Build ``(ExperimentConfig, reference_step)`` from parsed config values.

    ``nets`` maps algorithm name to an already loaded gradient model. When
    ``reference_step`` is set, algorithms without an explicit ``step_size``
    are rate-matched to LMS at that step.
    """
    nets = nets or {}
    v = dict(values)
    v.update({k: str(x) for k, x in overrides.items() if x is not None})

    def num(key, cast=float, default=None):
        if key not in v:
            return default
        try:
            return cast(v[key])
        except ValueError:
            raise FormatError(f"bad value {v[key]!r}", field=key) from None

    if "noise" not in v:
        raise ConfigurationError("config needs a 'noise' entry")
    noise = parse_model(v["noise"])
    names = [n.strip() for n in v.get("algorithms", "lms").split(",") if n.strip()]
    reference = num("reference_step")
    fixed, to_match = [], []
    for name in names:
        if name not in ALGORITHMS:
            raise ParameterError(f"unknown algorithm {name!r}; valid names: {', '.join(ALGORITHMS)}")
        spec = AlgorithmSpec(
            name,
            num(f"{name}.step_size", default=reference or 0.01),
            kernel_width=num(f"{name}.kernel_width"),
            window=num(f"{name}.window", int),
            net=nets.get(name),
            pretrain_step_size=num(f"{name}.pretrain_step_size"),
            pretrain_len=num(f"{name}.pretrain_len"),
        )
        (to_match if reference and f"{name}.step_size" not in v else fixed).append(spec)
    matched = match_step_sizes(to_match, noise, reference) if to_match else []
    by_name = {s.name: s for s in fixed + matched}
    w_o = v.get("w_o")
    cfg = ExperimentConfig(
        noise=noise,
        algorithms=[by_name[n] for n in names],
        M=num("M", int, 5),
        sigma_u=num("sigma_u", float, 1.0),
        w_o=None if w_o is None else [float(x) for x in w_o.replace(",", " ").split()],
        iterations=num("iterations", int, 5000),
        trials=num("trials", int, 100),
        pretrain_len=num("pretrain_len", float, 500),
        master_seed=num("master_seed", int, 0),
    )
    return cfg, reference
