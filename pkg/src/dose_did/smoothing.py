"""Local-linear kernel regression for conditional means and their slopes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BandwidthTooSmall, InvalidSpec

MIN_WINDOW_POINTS = 5


@dataclass(frozen=True)
class SmootherSpec:
    """How continuous-dose conditional means are smoothed.

    ``bandwidth`` is a positive float or ``"rot"`` for the rule of thumb
    ``1.06 * sd(D) * n**(-1/5)`` (widened per evaluation point so the
    kernel window holds at least five observations).
    """

    method: str = "local_linear"  # or "cell_means"
    kernel: str = "epanechnikov"
    bandwidth: float | str = "rot"
    derivative_order: int = 0

    def __post_init__(self):
        if self.method not in ("local_linear", "cell_means"):
            raise InvalidSpec(f"unknown smoother method {self.method!r}")
        if self.kernel not in ("epanechnikov", "gaussian"):
            raise InvalidSpec(f"unknown kernel {self.kernel!r}")
        if not isinstance(self.bandwidth, str) and not self.bandwidth > 0:
            raise InvalidSpec("bandwidth must be positive")
        if self.derivative_order not in (0, 1):
            raise InvalidSpec("derivative_order must be 0 or 1")


def _kernel(u: np.ndarray, kind: str) -> np.ndarray:
    if kind == "epanechnikov":
        return np.where(np.abs(u) < 1.0, 0.75 * (1.0 - u * u), 0.0)
    return np.exp(-0.5 * u * u)


def rule_of_thumb(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    sd = x.std(ddof=1) if x.size > 1 else 0.0
    return 1.06 * sd * x.size ** (-0.2)


def _bandwidth(x: np.ndarray, at: float, spec: SmootherSpec) -> float:
    if not isinstance(spec.bandwidth, str):
        return float(spec.bandwidth)
    h = rule_of_thumb(x)
    if spec.kernel == "epanechnikov":
        k = min(MIN_WINDOW_POINTS, x.size)
        kth = np.partition(np.abs(x - at), k - 1)[k - 1]
        # strict inequality in the kernel support
        h = max(h, kth * (1 + 1e-9) + 1e-12)
    return h


def local_linear(x, y, at: float, spec: SmootherSpec | None = None) -> tuple[float, float, int]:
    """Fit ``y ~ a + b (x - at)`` with kernel weights centred on ``at``.

    Returns
    -------
    level, slope, n_window
        Fitted conditional mean, its derivative, and the number of
        observations with positive kernel weight.
    """
    spec = spec or SmootherSpec()
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    h = _bandwidth(x, at, spec)
    u = (x - at) / h
    w = _kernel(u, spec.kernel)
    inside = w > 0
    n_win = int(inside.sum())
    if n_win < 2 or np.unique(x[inside]).size < 2:
        raise BandwidthTooSmall(
            f"fewer than two distinct doses inside the kernel window at d={at:g} (h={h:g})",
            dose=at, bandwidth=h,
        )
    xc = x[inside] - at
    wi = w[inside]
    yi = y[inside]
    s0, s1, s2 = wi.sum(), (wi * xc).sum(), (wi * xc * xc).sum()
    t0, t1 = (wi * yi).sum(), (wi * xc * yi).sum()
    det = s0 * s2 - s1 * s1
    if det <= 0:
        raise BandwidthTooSmall(f"singular local design at d={at:g}", dose=at, bandwidth=h)
    level = (s2 * t0 - s1 * t1) / det
    slope = (s0 * t1 - s1 * t0) / det
    return float(level), float(slope), n_win
