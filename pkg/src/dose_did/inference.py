"""Unit-level (cluster) nonparametric bootstrap.

Units are resampled with replacement and keep their full outcome paths.
Each replicate draws from its own RNG stream spawned from the master seed,
so the replicate sequence does not depend on the number of worker threads.
"""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
from scipy import stats

from .errors import AllReplicatesFailed, DoseDidError, InvalidSpec
from .panel import PanelDataset

FRAGILE_SHARE = 0.10


class FragileStatistic(UserWarning):
    """More than 10% of bootstrap replicates failed."""


@dataclass(frozen=True)
class BootstrapSpec:
    n_reps: int = 999
    seed: int | None = None
    ci_level: float = 0.95

    def __post_init__(self):
        if self.n_reps < 1:
            raise InvalidSpec("n_reps must be >= 1")
        if not 0.0 < self.ci_level < 1.0:
            raise InvalidSpec("ci_level must lie in (0, 1)")


@dataclass
class BootstrapResult:
    estimate: float
    se: float
    ci_lower: float
    ci_upper: float
    normal_ci: tuple[float, float]
    replicates: np.ndarray
    n_failed: int = 0
    seed: int | None = None
    warnings: list[str] = field(default_factory=list)

    def __iter__(self):
        # allows ``se, lo, hi, reps = bootstrap(...)``
        return iter((self.se, self.ci_lower, self.ci_upper, self.replicates))

    def to_dict(self) -> dict:
        return {
            "estimate": self.estimate,
            "se": self.se,
            "ci_lower": self.ci_lower,
            "ci_upper": self.ci_upper,
            "normal_ci": list(self.normal_ci),
            "n_reps": int(self.replicates.size + self.n_failed),
            "n_failed": self.n_failed,
            "seed": self.seed,
            "warnings": list(self.warnings),
        }


def _value(x: Any) -> float:
    return float(getattr(x, "value", x))


def resolve_threads(threads: int | None = None) -> int:
    """Worker count: explicit argument, else ``DOSE_DID_THREADS``, else 1."""
    if threads is None:
        env = os.environ.get("DOSE_DID_THREADS")
        threads = int(env) if env else 1
    return max(1, int(threads))


def bootstrap(
    data: PanelDataset,
    statistic: Callable[[PanelDataset], Any],
    spec: BootstrapSpec | None = None,
    threads: int | None = None,
) -> BootstrapResult:
    """Bootstrap standard error and percentile interval of ``statistic``.

    Parameters
    ----------
    data : PanelDataset
    statistic : callable
        Maps a panel to a float or to an object with a ``value`` attribute.
    spec : BootstrapSpec, optional
        When ``spec.seed`` is None a fresh entropy seed is drawn and stored on
        the result.
    threads : int, optional
        Worker cap; see :func:`resolve_threads`.

    Returns
    -------
    BootstrapResult
        Replicates where the statistic raised a domain error (or produced a
        non-finite value) are dropped and counted in ``n_failed``.
    """
    spec = spec or BootstrapSpec()
    seed = spec.seed if spec.seed is not None else int(np.random.SeedSequence().entropy % 2**63)
    n = data.n_units
    children = np.random.SeedSequence(seed).spawn(spec.n_reps)

    def one(child) -> float:
        rows = np.random.default_rng(child).integers(0, n, n)
        try:
            v = _value(statistic(data.take(rows)))
        except (DoseDidError, ZeroDivisionError, FloatingPointError):
            return np.nan
        return v if np.isfinite(v) else np.nan

    workers = resolve_threads(threads)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reps = np.fromiter(pool.map(one, children), float, spec.n_reps)
    else:
        reps = np.fromiter(map(one, children), float, spec.n_reps)

    ok = np.isfinite(reps)
    n_failed = int((~ok).sum())
    if n_failed == spec.n_reps:
        raise AllReplicatesFailed("the statistic failed on every bootstrap replicate", n_reps=spec.n_reps)
    reps = reps[ok]
    estimate = _value(statistic(data))
    notes = []
    if n_failed > FRAGILE_SHARE * spec.n_reps:
        msg = f"FragileStatistic: {n_failed} of {spec.n_reps} replicates failed"
        notes.append(msg)
        warnings.warn(msg, FragileStatistic, stacklevel=2)

    alpha = 1.0 - spec.ci_level
    se = float(reps.std(ddof=1)) if reps.size > 1 else 0.0
    lo, hi = np.quantile(reps, [alpha / 2, 1 - alpha / 2])
    z = stats.norm.ppf(1 - alpha / 2)
    return BootstrapResult(
        estimate=estimate,
        se=se,
        ci_lower=float(lo),
        ci_upper=float(hi),
        normal_ci=(estimate - z * se, estimate + z * se),
        replicates=reps,
        n_failed=n_failed,
        seed=seed,
        warnings=notes,
    )
