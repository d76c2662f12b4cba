"""Closed-form stability bound and steady-state MSD for the DNN-AF update.

Both predictions depend on the noise only through three expectations over
``v ~ p``::

    E[p'(v)/v],   E[(p'(v)/v)^2],   E[p'(v)^2]

which :func:`estimate_expectations` computes by Monte Carlo, with ``p'``
taken from the analytic density, a KDE, or a trained network.

Mean stability requires ``0 < eta < 2 / (sigma_u^2 E[-p'(v)/v])`` and the
steady-state mean square deviation is::

    eta^2 M sigma_u^2 E[p'(v)^2] / (1 - E[(1 + eta sigma_u^2 p'(v)/v)^2])

The second formula uses the scalar reading of the squared update factor.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import (
    BoundUndefinedError,
    EstimationError,
    InstabilityPredictedError,
    ParameterError,
)
from .gradnet import GradientNet
from .kde import KdeModel
from .noise import NoiseModel, draw
from .rng import make_rng

ZERO_REJECT = 1e-8


@dataclass(frozen=True)
class NoiseExpectations:
    e_ratio: float
    e_ratio_sq: float
    e_deriv_sq: float
    source: str
    n_mc: int

    def squared_factor(self, eta: float, sigma_u_sq: float) -> float:
        """``E[(1 + eta sigma_u^2 p'(v)/v)^2]`` expanded in the stored moments."""
        a = eta * sigma_u_sq
        return 1.0 + 2.0 * a * self.e_ratio + a * a * self.e_ratio_sq

    def denominator(self, eta: float, sigma_u_sq: float) -> float:
        """``1 - squared_factor`` without the cancellation of forming it that way."""
        a = eta * sigma_u_sq
        return -a * (2.0 * self.e_ratio + a * self.e_ratio_sq)


def _derivative_fn(model: NoiseModel, source):
    if isinstance(source, str):
        if source != "analytic":
            raise ParameterError(f"unknown derivative source {source!r}")
        return model.pdf_derivative, "analytic"
    if isinstance(source, KdeModel):
        return source.pdf_derivative, "kde"
    if isinstance(source, GradientNet):
        return source.forward, "gradnet"
    if callable(source):
        return source, "callable"
    raise ParameterError(f"unsupported derivative source {source!r}")


def draw_nonzero(model: NoiseModel, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` draws with every ``|v| < 1e-8`` rejected and redrawn."""
    kept = np.empty(0)
    for _ in range(1000):
        batch = draw(model, n, rng)
        kept = np.concatenate((kept, batch[np.abs(batch) >= ZERO_REJECT]))
        if kept.size >= n:
            return kept[:n]
    raise EstimationError("noise model puts (almost) all its mass at zero")


def estimate_expectations(model: NoiseModel, source="analytic", n_mc: int = 100_000,
                          seed: int = 0) -> NoiseExpectations:
    if n_mc < 1000:
        raise ParameterError("n_mc must be >= 1000")
    fn, tag = _derivative_fn(model, source)
    v = draw_nonzero(model, n_mc, make_rng(seed))
    deriv = np.asarray(fn(v), dtype=float)
    ratio = deriv / v
    moments = (float(np.mean(ratio)), float(np.mean(ratio * ratio)), float(np.mean(deriv * deriv)))
    if not all(math.isfinite(m) for m in moments):
        raise EstimationError(f"non-finite expectation estimate {moments}")
    return NoiseExpectations(*moments, source=tag, n_mc=int(n_mc))


def max_step_size(exp: NoiseExpectations, sigma_u_sq: float) -> float:
    """Upper end of the mean-stable step-size interval."""
    if not exp.e_ratio < 0:
        raise BoundUndefinedError(exp.e_ratio)
    return 2.0 / (sigma_u_sq * -exp.e_ratio)


def denominator_root(exp: NoiseExpectations, sigma_u_sq: float) -> float:
    """Step size at which the steady-state denominator reaches zero."""
    if not exp.e_ratio < 0:
        raise BoundUndefinedError(exp.e_ratio)
    return -2.0 * exp.e_ratio / (sigma_u_sq * exp.e_ratio_sq)


class SteadyState(NamedTuple):
    msd: float
    msd_db: float


def steady_state_msd(exp: NoiseExpectations, eta: float, M: int, sigma_u_sq: float) -> SteadyState:
    if not eta > 0:
        raise ParameterError("eta must be positive")
    denom = exp.denominator(eta, sigma_u_sq)
    if not denom > 0:
        raise InstabilityPredictedError(denom, eta)
    msd = eta * eta * M * sigma_u_sq * exp.e_deriv_sq / denom
    return SteadyState(msd, 10.0 * math.log10(msd) if msd > 0 else -math.inf)


THEORY_COLUMNS = ("model", "source", "eta", "M", "sigma_u_sq", "predicted_msd",
                  "predicted_msd_db", "eta_max")


def theory_rows(model: NoiseModel, exp: NoiseExpectations, etas, M: int, sigma_u_sq: float):
    """One row per step size; unstable or undefined predictions become ``nan``."""
    try:
        eta_max = max_step_size(exp, sigma_u_sq)
    except BoundUndefinedError:
        eta_max = math.nan
    rows = []
    for eta in etas:
        try:
            pred = steady_state_msd(exp, eta, M, sigma_u_sq)
        except InstabilityPredictedError:
            pred = SteadyState(math.nan, math.nan)
        rows.append((model.descriptor(), exp.source, float(eta), int(M), float(sigma_u_sq),
                     pred.msd, pred.msd_db, eta_max))
    return rows


def write_theory_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(THEORY_COLUMNS)
        for row in rows:
            out.writerow([x if isinstance(x, (str, int)) else format(x, ".17g") for x in row])
