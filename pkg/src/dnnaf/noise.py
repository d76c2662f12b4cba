"""Noise environments: models, seeded sampling and closed-form densities.

Four presets cover the test environments used throughout the package:

=========== =====================================
impulse     0.9 N(0, 0.1^2) + 0.1 N(0, 5^2)
uniform     U(-2, 2)
skewed      Rayleigh with scale 8 (``Ray(8^2)``)
multipeak   0.5 N(-3, 2^2) + 0.5 N(3, 2^2)
=========== =====================================

The Rayleigh preset is deliberately not centred; its mean is about 10.03.

Sampling draw order (normative, Philox stream from :mod:`dnnaf.rng`):

* Gaussian mixture: sample ``i`` consumes uniforms ``3i, 3i+1, 3i+2``. The
  first selects the component by cumulative weight, the other two feed one
  Box-Muller transform whose cosine branch is used.
* Uniform: sample ``i`` consumes uniform ``i``, ``v = a + (b - a) u``.
* Rayleigh: sample ``i`` consumes uniform ``i``, ``v = s sqrt(-2 log(1 - u))``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .errors import FormatError, ParameterError, UndefinedPointError
from .rng import box_muller, make_rng

_SQRT_2PI = math.sqrt(2.0 * math.pi)


def _fmt(x: float) -> str:
    return repr(float(x))


@dataclass(frozen=True)
class GaussianMixture:
    """Finite mixture of normals; ``components`` holds (weight, mean, std)."""

    components: tuple[tuple[float, float, float], ...]

    def __post_init__(self):
        comps = tuple((float(w), float(m), float(s)) for w, m, s in self.components)
        object.__setattr__(self, "components", comps)
        if not comps:
            raise ParameterError("mixture needs at least one component")
        for w, _, s in comps:
            if not (0.0 < w <= 1.0):
                raise ParameterError(f"mixture weight {w} outside (0, 1]")
            if not s > 0.0:
                raise ParameterError(f"mixture std {s} must be positive")
        total = math.fsum(w for w, _, _ in comps)
        if abs(total - 1.0) > 1e-12:
            raise ParameterError(f"mixture weights sum to {total!r}, not 1")

    @property
    def _arrays(self):
        w, m, s = (np.array(c, dtype=float) for c in zip(*self.components))
        return w, m, s

    def pdf(self, v):
        w, m, s = self._arrays
        x = np.asarray(v, dtype=float)[..., None]
        return np.sum(w * np.exp(-0.5 * ((x - m) / s) ** 2) / (_SQRT_2PI * s), axis=-1)

    def pdf_derivative(self, v):
        w, m, s = self._arrays
        x = np.asarray(v, dtype=float)[..., None]
        dens = np.exp(-0.5 * ((x - m) / s) ** 2) / (_SQRT_2PI * s)
        return np.sum(w * (-(x - m) / s**2) * dens, axis=-1)

    def mean(self) -> float:
        return math.fsum(w * m for w, m, _ in self.components)

    def variance(self) -> float:
        second = math.fsum(w * (s * s + m * m) for w, m, s in self.components)
        return second - self.mean() ** 2

    def _draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        w, m, s = self._arrays
        u = rng.random((n, 3))
        cum = np.cumsum(w)
        comp = np.minimum(np.searchsorted(cum, u[:, 0], side="right"), len(w) - 1)
        z, _ = box_muller(u[:, 1], u[:, 2])
        return m[comp] + s[comp] * z

    def descriptor(self) -> str:
        parts = ",".join(f"{_fmt(w)}:{_fmt(m)}:{_fmt(s)}" for w, m, s in self.components)
        return f"gmm[{parts}]"


@dataclass(frozen=True)
class Uniform:
    lower: float
    upper: float

    def __post_init__(self):
        if not float(self.lower) < float(self.upper):
            raise ParameterError(f"uniform needs lower < upper, got {self.lower}, {self.upper}")

    def pdf(self, v):
        x = np.asarray(v, dtype=float)
        inside = (x >= self.lower) & (x <= self.upper)
        return np.where(inside, 1.0 / (self.upper - self.lower), 0.0)

    def pdf_derivative(self, v):
        x = np.asarray(v, dtype=float)
        if np.any((x == self.lower) | (x == self.upper)):
            raise UndefinedPointError("uniform density is not differentiable at its boundary")
        return np.zeros_like(x)

    def mean(self) -> float:
        return 0.5 * (self.lower + self.upper)

    def variance(self) -> float:
        return (self.upper - self.lower) ** 2 / 12.0

    def _draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.lower + (self.upper - self.lower) * rng.random(n)

    def descriptor(self) -> str:
        return f"uniform[{_fmt(self.lower)}:{_fmt(self.upper)}]"


@dataclass(frozen=True)
class Rayleigh:
    """Rayleigh density ``(v / s^2) exp(-v^2 / 2 s^2)`` on ``v >= 0``."""

    scale: float

    def __post_init__(self):
        if not float(self.scale) > 0.0:
            raise ParameterError(f"rayleigh scale {self.scale} must be positive")

    @classmethod
    def from_table(cls, param: float) -> "Rayleigh":
        """Read ``Ray(param)`` with ``param`` as the squared scale, e.g. Ray(8^2)."""
        if not param > 0:
            raise ParameterError(f"rayleigh parameter {param} must be positive")
        return cls(math.sqrt(param))

    def pdf(self, v):
        x = np.asarray(v, dtype=float)
        s2 = self.scale**2
        xp = np.maximum(x, 0.0)
        return np.where(x >= 0, xp / s2 * np.exp(-0.5 * xp * xp / s2), 0.0)

    def pdf_derivative(self, v):
        # one-sided (right) derivative at v = 0
        x = np.asarray(v, dtype=float)
        s2 = self.scale**2
        xp = np.maximum(x, 0.0)
        return np.where(x >= 0, (1.0 - xp * xp / s2) / s2 * np.exp(-0.5 * xp * xp / s2), 0.0)

    def mean(self) -> float:
        return self.scale * math.sqrt(math.pi / 2.0)

    def variance(self) -> float:
        return (4.0 - math.pi) / 2.0 * self.scale**2

    def _draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.scale * np.sqrt(-2.0 * np.log1p(-rng.random(n)))

    def descriptor(self) -> str:
        return f"rayleigh[{_fmt(self.scale)}]"


@dataclass(frozen=True)
class PointMass:
    """Degenerate noise fixed at ``value``; used for noiseless identification."""

    value: float = 0.0

    def pdf(self, v):
        raise ParameterError("a point mass has no density")

    pdf_derivative = pdf

    def mean(self) -> float:
        return float(self.value)

    def variance(self) -> float:
        return 0.0

    def _draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return np.full(n, float(self.value))

    def descriptor(self) -> str:
        return f"point[{_fmt(self.value)}]"


NoiseModel = Union[GaussianMixture, Uniform, Rayleigh, PointMass]

PRESETS: dict[str, NoiseModel] = {
    "impulse": GaussianMixture(((0.9, 0.0, 0.1), (0.1, 0.0, 5.0))),
    "uniform": Uniform(-2.0, 2.0),
    "skewed": Rayleigh.from_table(8.0**2),
    "multipeak": GaussianMixture(((0.5, -3.0, 2.0), (0.5, 3.0, 2.0))),
}


def preset(name: str) -> NoiseModel:
    try:
        return PRESETS[name]
    except KeyError:
        raise ParameterError(
            f"unknown noise preset {name!r}; choose from {', '.join(PRESETS)}"
        ) from None


_DESC = re.compile(r"^\s*(gmm|uniform|rayleigh|point)\[(.*)\]\s*$")


def parse_model(text: str) -> NoiseModel:
    """Inverse of ``model.descriptor()``; preset names are accepted too."""
    if text.strip() in PRESETS:
        return PRESETS[text.strip()]
    match = _DESC.match(text)
    if not match:
        raise ParameterError(f"cannot parse noise model {text!r}")
    kind, body = match.groups()
    try:
        if kind == "gmm":
            comps = [tuple(float(x) for x in part.split(":")) for part in body.split(",")]
            if any(len(c) != 3 for c in comps):
                raise ValueError("each component needs weight:mean:std")
            return GaussianMixture(tuple(comps))
        if kind == "uniform":
            lo, hi = (float(x) for x in body.split(":"))
            return Uniform(lo, hi)
        if kind == "rayleigh":
            return Rayleigh(float(body))
        return PointMass(float(body))
    except ValueError as exc:
        raise ParameterError(f"bad parameters in {text!r}: {exc}") from None


def draw(model: NoiseModel, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` samples from an existing generator (continues its stream)."""
    return model._draw(int(n), rng)


@dataclass
class NoiseSampleSet:
    samples: np.ndarray
    model: NoiseModel
    seed: int

    def __len__(self) -> int:
        return len(self.samples)

    def to_csv(self, path) -> None:
        lines = [
            f"# model={self.model.descriptor()} seed={self.seed} n={len(self.samples)}",
            "index,value",
        ]
        lines += [f"{i},{x!r}" for i, x in enumerate(self.samples.tolist())]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path) -> "NoiseSampleSet":
        text = Path(path).read_text().splitlines()
        if not text or not text[0].startswith("#"):
            raise FormatError("missing '#' header line", field="header")
        meta = dict(tok.split("=", 1) for tok in text[0][1:].split() if "=" in tok)
        if "model" not in meta or "seed" not in meta:
            raise FormatError("header must record model and seed", field="header")
        if len(text) < 2 or text[1].strip() != "index,value":
            raise FormatError("expected column header 'index,value'", field="columns")
        values = []
        for lineno, line in enumerate(text[2:], start=3):
            parts = line.split(",")
            if len(parts) != 2:
                raise FormatError(f"line {lineno}: expected two columns", field="value")
            try:
                values.append(float(parts[1]))
            except ValueError:
                raise FormatError(f"line {lineno}: bad number {parts[1]!r}", field="value") from None
        try:
            model, seed = parse_model(meta["model"]), int(meta["seed"])
        except ValueError as exc:
            raise FormatError(str(exc), field="header") from None
        return cls(np.array(values), model, seed)


def sample(model: NoiseModel, n: int, seed: int) -> NoiseSampleSet:
    """Draw ``n`` i.i.d. samples from ``model`` with a private seeded stream."""
    if int(n) < 1:
        raise ParameterError(f"sample count must be >= 1, got {n}")
    return NoiseSampleSet(draw(model, n, make_rng(seed)), model, int(seed))


def analytic_pdf(model: NoiseModel, v):
    return model.pdf(v)


def analytic_pdf_derivative(model: NoiseModel, v):
    return model.pdf_derivative(v)
