"""Gaussian kernel density estimates of a noise density and its derivative.

The derivative estimate at the sample points themselves is the regression
target set for :mod:`dnnaf.gradnet`. Evaluation is a dense O(n * m) kernel sum;
rows are processed in fixed-size chunks so results never depend on how many
worker threads are used.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateSampleError, FormatError, ParameterError
from .noise import NoiseSampleSet

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_CHUNK = 256


def gaussian_kernel(v):
    v = np.asarray(v, dtype=float)
    return _INV_SQRT_2PI * np.exp(-0.5 * v * v)


def gaussian_kernel_derivative(v):
    v = np.asarray(v, dtype=float)
    return -v * _INV_SQRT_2PI * np.exp(-0.5 * v * v)


def silverman_bandwidth(samples) -> float:
    """Silverman's rule of thumb, ``0.9 min(std, IQR/1.34) n^(-1/5)``.

    Uses the sample standard deviation (``ddof=1``). When the interquartile
    range collapses to zero while the spread does not, the standard deviation
    is used alone.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2:
        raise DegenerateSampleError("Silverman's rule needs at least two samples")
    std = float(np.std(x, ddof=1))
    if not std > 0.0:
        raise DegenerateSampleError("samples have zero variance")
    q75, q25 = np.percentile(x, [75, 25])
    iqr = float(q75 - q25)
    spread = min(std, iqr / 1.34) if iqr > 0 else std
    return 0.9 * spread * x.size ** (-0.2)


def _chunked(fn, points: np.ndarray, threads: int) -> np.ndarray:
    chunks = [points[i : i + _CHUNK] for i in range(0, len(points), _CHUNK)]
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(fn, chunks))
    else:
        parts = [fn(c) for c in chunks]
    return np.concatenate(parts) if parts else np.empty(0)


class KdeModel:
    """Fixed-bandwidth Gaussian KDE over a set of scalar samples."""

    def __init__(self, samples, bandwidth: float | None = None):
        x = np.array(samples, dtype=float).ravel()
        if x.size < 2:
            raise DegenerateSampleError("a KDE needs at least two samples")
        if bandwidth is None:
            bandwidth = silverman_bandwidth(x)
        if not (np.isfinite(bandwidth) and bandwidth > 0):
            raise ParameterError(f"bandwidth must be positive, got {bandwidth}")
        x.setflags(write=False)
        self.samples = x
        self.bandwidth = float(bandwidth)

    @property
    def n(self) -> int:
        return self.samples.size

    def _sum(self, kernel, v, threads: int) -> np.ndarray:
        h = self.bandwidth

        def block(pts):
            z = (pts[:, None] - self.samples[None, :]) / h
            return np.sum(kernel(z), axis=1)

        v = np.asarray(v, dtype=float)
        flat = np.ascontiguousarray(v.ravel())
        return _chunked(block, flat, max(1, int(threads))).reshape(v.shape)

    def pdf(self, v, threads: int = 1):
        return self._sum(gaussian_kernel, v, threads) / (self.n * self.bandwidth)

    def pdf_derivative(self, v, threads: int = 1):
        return self._sum(gaussian_kernel_derivative, v, threads) / (self.n * self.bandwidth**2)

    def max_derivative_bound(self) -> float:
        """Upper bound on |p'| implied by the kernel: ``e^(-1/2) / (sqrt(2 pi) h^2)``."""
        return math.exp(-0.5) * _INV_SQRT_2PI / self.bandwidth**2


def estimate_pdf(kde: KdeModel, v):
    return kde.pdf(v)


def estimate_pdf_derivative(kde: KdeModel, v):
    return kde.pdf_derivative(v)


@dataclass
class GradientDataset:
    """Noise samples paired with density-derivative targets at those samples."""

    inputs: np.ndarray
    targets: np.ndarray
    bandwidth_used: float
    source: str = ""

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float)
        self.targets = np.asarray(self.targets, dtype=float)
        if self.inputs.shape != self.targets.shape or self.inputs.ndim != 1:
            raise ParameterError("inputs and targets must be 1-D arrays of equal length")
        if not np.all(np.isfinite(self.targets)):
            raise ParameterError("targets contain non-finite values")

    def __len__(self) -> int:
        return self.inputs.size

    def to_csv(self, path) -> None:
        lines = [
            f"# n={len(self)} h={self.bandwidth_used!r} source={self.source or 'unknown'}",
            "input,target",
        ]
        lines += [f"{x!r},{y!r}" for x, y in zip(self.inputs.tolist(), self.targets.tolist())]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path) -> "GradientDataset":
        text = Path(path).read_text().splitlines()
        if not text or not text[0].startswith("#"):
            raise FormatError("missing '#' header line", field="header")
        meta = dict(tok.split("=", 1) for tok in text[0][1:].split() if "=" in tok)
        try:
            h = float(meta["h"])
        except (KeyError, ValueError):
            raise FormatError("header must record the bandwidth h", field="h") from None
        if len(text) < 2 or text[1].strip() != "input,target":
            raise FormatError("expected column header 'input,target'", field="columns")
        rows = []
        for lineno, line in enumerate(text[2:], start=3):
            parts = line.split(",")
            try:
                if len(parts) != 2:
                    raise ValueError
                rows.append((float(parts[0]), float(parts[1])))
            except ValueError:
                raise FormatError(f"line {lineno}: expected 'input,target'", field="row") from None
        arr = np.array(rows, dtype=float).reshape(-1, 2)
        source = meta.get("source", "")
        return cls(arr[:, 0], arr[:, 1], h, "" if source == "unknown" else source)


def build_gradient_dataset(
    samples, bandwidth: float | None = None, threads: int = 1
) -> GradientDataset:
    """Pair every noise sample with the KDE derivative evaluated at it.

    ``samples`` is a :class:`~dnnaf.noise.NoiseSampleSet` or a plain array;
    the bandwidth defaults to Silverman's rule.
    """
    if isinstance(samples, NoiseSampleSet):
        values, source = samples.samples, samples.model.descriptor()
    else:
        values, source = np.asarray(samples, dtype=float), ""
    kde = KdeModel(values, bandwidth)
    targets = kde.pdf_derivative(kde.samples, threads=threads)
    return GradientDataset(np.array(kde.samples), targets, kde.bandwidth, source)


def derivative_on_grid(kde: KdeModel, lo: float, hi: float, points: int = 401):
    """Evaluate the derivative estimate on a uniform grid (for fit plots)."""
    grid = np.linspace(lo, hi, points)
    return grid, kde.pdf_derivative(grid)
