"""Two-period level and slope effects of a continuous or multi-valued dose.

The level effect at dose ``d`` compares the outcome path of dose-``d`` units
with untreated units.  Slopes compare paths of neighbouring doses.  Under
standard parallel trends the slope of the path mixes the causal response with
a selection-bias term, so it is tagged ``SlopeOfPath`` unless the user asserts
strong parallel trends (``assume="strong-pt"``).
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import (
    DegenerateDose,
    DoseOutOfSupport,
    EmptyCell,
    NotTwoPeriod,
    NoUntreatedUnits,
)
from .panel import DoseGrid, PanelDataset, dose_grid
from .smoothing import SmootherSpec, local_linear

SELECTION_BIAS_CAVEAT = (
    "under standard parallel trends this slope equals the average causal response "
    "on the treated plus a selection-bias term; it is a causal response only under "
    "strong parallel trends"
)

ASSUMPTIONS = ("pt", "strong-pt")


@dataclass
class CellEstimate:
    value: float
    dose: float
    estimand: str
    comparison: str = "Untreated"
    se: float | None = None
    n_eff: int = 1
    assumption: str = "pt"
    flags: list[str] = field(default_factory=list)
    caveat: str | None = None

    def __post_init__(self):
        if self.n_eff < 1:
            raise ValueError("n_eff must be >= 1")
        if self.se is not None and self.se < 0:
            raise ValueError("se must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


def _check_assume(assume: str) -> None:
    if assume not in ASSUMPTIONS:
        raise ValueError(f"assume must be one of {ASSUMPTIONS}")


def two_period_arrays(data: PanelDataset) -> tuple[np.ndarray, np.ndarray]:
    """``(delta_y, dose)`` for a two-period panel."""
    if data.n_periods != 2:
        raise NotTwoPeriod(f"expected a two-period panel, got T={data.n_periods}")
    return data.delta_y, data.dose


def _grid(data: PanelDataset, grid: DoseGrid | None) -> DoseGrid:
    return grid if grid is not None else dose_grid(data)


def _m_delta(dy, D, d, grid, spec):
    """Conditional mean of ``dy`` at dose ``d`` and its effective sample size."""
    if d == 0 or grid.is_discrete:
        cell = D == d
        n = int(cell.sum())
        if n == 0:
            raise EmptyCell(f"no units with dose {d:g}", dose=d)
        return float(dy[cell].mean()), n
    if not grid.d_L <= d <= grid.d_U:
        raise DoseOutOfSupport(f"dose {d:g} outside [{grid.d_L:g}, {grid.d_U:g}]", dose=d)
    pos = D > 0
    level, _, n = local_linear(D[pos], dy[pos], d, spec)
    return level, n


def path_mean(data: PanelDataset, d: float, spec: SmootherSpec | None = None,
              grid: DoseGrid | None = None) -> CellEstimate:
    """``E[dY | D = d]``: exact cell mean (discrete) or local-linear fit (continuous)."""
    dy, D = two_period_arrays(data)
    grid = _grid(data, grid)
    value, n = _m_delta(dy, D, float(d), grid, spec)
    return CellEstimate(value, float(d), "PathMean", comparison="None", n_eff=n)


def att_dd(data: PanelDataset, d: float, assume: str = "pt", spec: SmootherSpec | None = None,
           grid: DoseGrid | None = None) -> CellEstimate:
    """Level effect at dose ``d`` against untreated units.

    Tagged ``ATT_dd`` under parallel trends and ``ATE_d`` under strong
    parallel trends; the number is the same.
    """
    _check_assume(assume)
    dy, D = two_period_arrays(data)
    untreated = D == 0
    if not untreated.any():
        raise NoUntreatedUnits("level effects need untreated (dose 0) units")
    grid = _grid(data, grid)
    m_d, n = _m_delta(dy, D, float(d), grid, spec)
    m_0 = float(dy[untreated].mean())
    estimand = "ATE_d" if assume == "strong-pt" else "ATT_dd"
    return CellEstimate(m_d - m_0, float(d), estimand, n_eff=n, assumption=assume)


def _tag_slope(value, d, n, assume, comparison="AdjacentDose", flags=None):
    if assume == "strong-pt":
        return CellEstimate(value, d, "ACR_d", comparison, n_eff=n, assumption=assume,
                            flags=flags or [])
    return CellEstimate(value, d, "SlopeOfPath", comparison, n_eff=n, assumption=assume,
                        flags=flags or [], caveat=SELECTION_BIAS_CAVEAT)


def acr(data: PanelDataset, d: float, spec: SmootherSpec | None = None, assume: str = "pt",
        grid: DoseGrid | None = None) -> CellEstimate:
    """Slope of the outcome path at dose ``d``.

    Discrete doses use the adjacent-dose difference quotient with ``d_0 = 0``,
    so the first slope is ``ATT(d_1|d_1) / d_1``.  Continuous doses use the
    local-linear derivative.
    """
    _check_assume(assume)
    dy, D = two_period_arrays(data)
    grid = _grid(data, grid)
    d = float(d)
    if d < grid.d_L or d > grid.d_U:
        raise DoseOutOfSupport(f"dose {d:g} outside [{grid.d_L:g}, {grid.d_U:g}]", dose=d)
    if grid.is_discrete:
        j = np.searchsorted(grid.points, d)
        if j >= grid.points.size or grid.points[j] != d:
            raise EmptyCell(f"dose {d:g} is not an observed dose", dose=d)
        prev = float(grid.points[j - 1]) if j > 0 else 0.0
        if prev == 0.0 and not np.any(D == 0):
            raise NoUntreatedUnits("the lowest-dose slope needs untreated units")
        m_hi, n_hi = _m_delta(dy, D, d, grid, spec)
        m_lo, n_lo = _m_delta(dy, D, prev, grid, spec)
        comparison = "Untreated" if prev == 0.0 else "AdjacentDose"
        return _tag_slope((m_hi - m_lo) / (d - prev), d, n_hi + n_lo, assume, comparison)
    pos = D > 0
    _, slope, n = local_linear(D[pos], dy[pos], d, spec)
    return _tag_slope(slope, d, n, assume)


def acr_star(data: PanelDataset, spec: SmootherSpec | None = None, assume: str = "pt",
             grid: DoseGrid | None = None) -> CellEstimate:
    """Average slope over the empirical distribution of positive doses."""
    _check_assume(assume)
    dy, D = two_period_arrays(data)
    grid = _grid(data, grid)
    has_untreated = bool(np.any(D == 0))
    if grid.points.size < 2:
        if not has_untreated:
            raise DegenerateDose("a single positive dose and no untreated units: slope undefined")
        d = float(grid.points[0])
        att = att_dd(data, d, assume, spec, grid)
        return _tag_slope(att.value / d, d, att.n_eff, assume, "Untreated",
                          flags=["DegenerateDose", "FallbackATTOverDose"])
    pos_doses, counts = np.unique(D[D > 0], return_counts=True)
    flags: list[str] = []
    if grid.is_discrete and not has_untreated:
        # first slope unidentified without an untreated anchor
        pos_doses, counts = pos_doses[1:], counts[1:]
        flags.append("FirstSlopeUnidentified")
    slopes = np.array([acr(data, d, spec, assume, grid).value for d in pos_doses])
    value = float(np.dot(slopes, counts) / counts.sum())
    est = _tag_slope(value, float("nan"), int(counts.sum()), assume, flags=flags)
    est.estimand = "ACR_star" if assume == "strong-pt" else "SlopeOfPath_star"
    return est
