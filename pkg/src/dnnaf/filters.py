"""Adaptive filters for the linear regression model ``d = w_o^T u + v``.

All filters share one interface: ``update(u, d)`` computes the residual
``e = d - w^T u``, applies the algorithm's weight update in place and returns
``e``. Weights may be a single vector of shape ``(M,)`` or a stack of shape
``(T, M)``, in which case ``T`` independent trials advance in lock-step (``u``
is then ``(T, M)`` and ``d`` is ``(T,)``).

A trial whose weights become non-finite is flagged in ``diverged`` on the
exact step it happens (``diverged_at`` holds that 0-based step index). Its
weights stay non-finite afterwards; other trials are unaffected.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigurationError, ParameterError
from .gradnet import GradientNet

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def residual(w, u, d):
    w, u = np.asarray(w, dtype=float), np.asarray(u, dtype=float)
    if w.shape[-1] != u.shape[-1]:
        raise ParameterError(f"filter length {w.shape[-1]} does not match input length {u.shape[-1]}")
    return np.asarray(d, dtype=float) - np.sum(w * u, axis=-1)


def _lms_delta(step_size, e, u):
    return step_size * e[..., None] * u


class AdaptiveFilter:
    name = "base"

    def __init__(self, weights, step_size: float):
        self.w = np.array(weights, dtype=float)
        if self.w.ndim not in (1, 2):
            raise ParameterError("weights must have shape (M,) or (trials, M)")
        if not step_size > 0:
            raise ParameterError(f"step size must be positive, got {step_size}")
        self.step_size = float(step_size)
        self.iteration = 0
        self.diverged = np.zeros(self.w.shape[:-1], dtype=bool)
        self.diverged_at = np.full(self.w.shape[:-1], -1)

    @property
    def length(self) -> int:
        return self.w.shape[-1]

    def residual(self, u, d):
        return residual(self.w, u, d)

    def update(self, u, d):
        u = np.asarray(u, dtype=float)
        e = self.residual(u, d)
        with np.errstate(over="ignore", invalid="ignore"):
            self.w = self.w + self._delta(u, e)
        bad = ~np.all(np.isfinite(self.w), axis=-1)
        fresh = bad & ~self.diverged
        if np.any(fresh):
            self.diverged_at[fresh] = self.iteration
            self.diverged |= fresh
        self.iteration += 1
        return e

    def _delta(self, u, e):
        raise NotImplementedError


class LMS(AdaptiveFilter):
    """``w += eta e u``."""

    name = "lms"

    def _delta(self, u, e):
        return _lms_delta(self.step_size, e, u)


class LMF(AdaptiveFilter):
    """Least mean fourth, ``w += eta e^3 u``; diverges readily on large residuals."""

    name = "lmf"

    def _delta(self, u, e):
        return self.step_size * (e * e * e)[..., None] * u


class MCC(AdaptiveFilter):
    """Maximum correntropy: ``w += eta exp(-e^2 / 2 sigma^2) e u``."""

    name = "mcc"

    def __init__(self, weights, step_size: float, kernel_width: float = 2.0):
        super().__init__(weights, step_size)
        if not kernel_width > 0:
            raise ParameterError("MCC kernel width must be positive")
        self.kernel_width = float(kernel_width)

    def _delta(self, u, e):
        factor = np.exp(-0.5 * e * e / self.kernel_width**2) * e
        return self.step_size * factor[..., None] * u


class MEE(AdaptiveFilter):
    """Minimum error entropy via the sliding-window information potential.

    Keeps the last ``window`` residuals together with their inputs and ascends
    ``V = (1/L^2) sum_j sum_k G_sigma(e_j - e_k)`` (``G_sigma`` a normalized
    Gaussian), whose gradient with respect to ``w`` is
    ``(1/(L^2 sigma^2)) sum_j sum_k G_sigma(e_j - e_k) (e_j - e_k) (u_j - u_k)``.
    ``L`` is the number of residuals currently buffered.
    """

    name = "mee"

    def __init__(self, weights, step_size: float, window: int = 10, kernel_width: float = 1.0):
        super().__init__(weights, step_size)
        if int(window) < 2:
            raise ParameterError("MEE window must be >= 2")
        if not kernel_width > 0:
            raise ParameterError("MEE kernel width must be positive")
        self.window = int(window)
        self.kernel_width = float(kernel_width)
        batch = self.w.shape[:-1]
        self._e = np.zeros(batch + (self.window,))
        self._u = np.zeros(batch + (self.window, self.length))
        self._count = 0

    @property
    def error_buffer(self) -> np.ndarray:
        """Buffered residuals, oldest first."""
        k = min(self._count, self.window)
        order = [(self._count - k + j) % self.window for j in range(k)]
        return self._e[..., order]

    def _delta(self, u, e):
        slot = self._count % self.window
        self._e[..., slot] = e
        self._u[..., slot, :] = u
        self._count += 1
        k = min(self._count, self.window)
        eb, ub = self._e[..., :k], self._u[..., :k, :]
        de = eb[..., :, None] - eb[..., None, :]
        du = ub[..., :, None, :] - ub[..., None, :, :]
        sigma = self.kernel_width
        psi = _INV_SQRT_2PI / sigma * np.exp(-0.5 * de * de / sigma**2) * de / sigma**2
        grad = np.sum(psi[..., None] * du, axis=(-3, -2)) / (k * k)
        return self.step_size * grad


class DNNAF(AdaptiveFilter):
    """Network-driven filter: ``w -= eta u p'(e)`` after an LMS warm-up.

    For the first ``pretrain_len`` updates the filter runs LMS with
    ``pretrain_step_size`` (default: ``step_size``) through the exact same code
    path as :class:`LMS`. ``net`` is a trained :class:`GradientNet` or any
    vectorized callable returning ``p'(e)``.
    """

    name = "dnnaf"

    def __init__(self, weights, step_size: float, net, pretrain_len: float = 500,
                 pretrain_step_size: float | None = None):
        super().__init__(weights, step_size)
        if isinstance(net, GradientNet) and not net.trained:
            raise ConfigurationError("DNN-AF needs a trained gradient network")
        if not callable(net):
            raise ConfigurationError("DNN-AF needs a callable derivative estimate")
        if pretrain_len < 0:
            raise ParameterError("pretrain_len must be >= 0")
        if pretrain_step_size is not None and not pretrain_step_size > 0:
            raise ParameterError("pretrain step size must be positive")
        self.net = net
        self.pretrain_len = pretrain_len
        self.pretrain_step_size = float(pretrain_step_size or step_size)

    def gradient(self, e):
        e = np.asarray(e, dtype=float)
        finite = np.isfinite(e)
        if np.all(finite):
            return np.asarray(self.net(e), dtype=float)
        out = np.full(e.shape, np.nan)
        if np.any(finite):
            out[finite] = self.net(e[finite])
        return out

    def _delta(self, u, e):
        if self.iteration < self.pretrain_len:
            return _lms_delta(self.pretrain_step_size, e, u)
        return -self.step_size * self.gradient(e)[..., None] * u


ALGORITHMS = {cls.name: cls for cls in (LMS, LMF, MCC, MEE, DNNAF)}
