"""Group-time effects with staggered adoption and their aggregations.

Every cell ``(g, t, d)`` uses the long difference ``Y_t - Y_{g-1}``.  Level
effects compare dose-``d`` units of timing group ``g`` with a comparison group
(not-yet-treated by default, never-treated on request); slopes are taken
within group ``g`` so the comparison group drops out except for the lowest
dose, whose slope is anchored at zero dose.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateDose,
    DoseOutOfSupport,
    EmptyCell,
    InvalidSpec,
    MissingCells,
    NoComparisonUnits,
)
from .panel import DoseGrid, PanelDataset, dose_grid
from .smoothing import SmootherSpec, local_linear, rule_of_thumb

COMPARISONS = {"nyt": "NotYetTreated", "never": "NeverTreated"}


@dataclass
class GroupTimeEstimate:
    g: int
    t: int
    dose: float
    value: float
    estimand: str
    comparison: str
    se: float | None = None
    n_eff: int = 1

    @property
    def key(self) -> tuple[int, int, float]:
        return (self.g, self.t, self.dose)

    def to_dict(self) -> dict:
        return {
            "g": self.g, "t": self.t, "dose": self.dose, "value": self.value,
            "estimand": self.estimand, "comparison": self.comparison,
            "se": self.se, "n_eff": self.n_eff,
        }


@dataclass
class AggregatedEffect:
    kind: str  # Group | Overall | StarMP | EventStudy | EventStudyAvg
    value: float
    g: int | None = None
    e: int | None = None
    dose: float | None = None
    se: float | None = None
    ci: tuple[float, float] | None = None
    weights_used: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind, "value": self.value, "g": self.g, "e": self.e,
            "dose": self.dose, "se": self.se,
            "ci": list(self.ci) if self.ci is not None else None,
            "weights_used": [
                {"g": k[0], "t": k[1], "dose": k[2], "weight": w} for k, w in self.weights_used.items()
            ],
        }


def _comparison_name(comparison: str) -> str:
    try:
        return COMPARISONS[comparison]
    except KeyError:
        raise InvalidSpec(f"comparison must be one of {tuple(COMPARISONS)}") from None


def _check_cell(data: PanelDataset, g: int, t: int) -> None:
    T = data.n_periods
    if not 2 <= g <= T:
        raise InvalidSpec(f"group {g} is not a treated timing group (2..{T})")
    if not 1 <= t <= T:
        raise InvalidSpec(f"period {t} outside 1..{T}")
    if not np.any(data.first_treated == g):
        raise EmptyCell(f"no units in timing group {g}", g=g)


def comparison_mask(data: PanelDataset, g: int, t: int, comparison: str = "nyt") -> np.ndarray:
    """Units serving as the comparison for cell ``(g, t)``.

    Not-yet-treated means untreated through ``max(t, g)`` (for post periods
    this is ``W_t = 0``); never-treated means dose 0.
    """
    _comparison_name(comparison)
    if comparison == "never":
        return data.dose == 0
    return data.first_treated > max(t, g)


def long_diff(data: PanelDataset, g: int, t: int) -> np.ndarray:
    return data.outcome[:, t - 1] - data.outcome[:, g - 2]


def _grid(data, grid):
    return grid if grid is not None else dose_grid(data)


def _treated_level(data, g, t, d, grid, spec):
    y = long_diff(data, g, t)
    in_g = data.first_treated == g
    if grid.is_discrete:
        cell = in_g & (data.dose == d)
        n = int(cell.sum())
        if n == 0:
            raise EmptyCell(f"no units with G={g}, D={d:g}", g=g, dose=d)
        return float(y[cell].mean()), n
    dg = data.dose[in_g]
    if not dg.min() <= d <= dg.max():
        raise DoseOutOfSupport(f"dose {d:g} outside group {g} support", g=g, dose=d)
    level, _, n = local_linear(dg, y[in_g], d, spec)
    return level, n


def ate_gtd(
    data: PanelDataset,
    g: int,
    t: int,
    d: float,
    comparison: str = "nyt",
    assume: str = "pt",
    spec: SmootherSpec | None = None,
    grid: DoseGrid | None = None,
) -> GroupTimeEstimate:
    """Level effect of dose ``d`` for timing group ``g`` in period ``t``.

    ``mean(Y_t - Y_{g-1} | G=g, D=d) - mean(Y_t - Y_{g-1} | comparison)``.
    Tagged ``ATE_gtd`` under strong parallel trends, ``ATT_gtd`` otherwise.
    """
    _check_cell(data, g, t)
    grid = _grid(data, grid)
    d = float(d)
    name = _comparison_name(comparison)
    comp = comparison_mask(data, g, t, comparison)
    if not comp.any():
        raise NoComparisonUnits(f"no {name} units for cell (g={g}, t={t})", g=g, t=t)
    treated, n = _treated_level(data, g, t, d, grid, spec)
    value = treated - float(long_diff(data, g, t)[comp].mean())
    estimand = "ATE_gtd" if assume == "strong-pt" else "ATT_gtd"
    return GroupTimeEstimate(g, t, d, value, estimand, name, n_eff=n)


def acr_gtd(
    data: PanelDataset,
    g: int,
    t: int,
    d: float,
    spec: SmootherSpec | None = None,
    comparison: str = "nyt",
    grid: DoseGrid | None = None,
) -> GroupTimeEstimate:
    """Slope in the dose of ``E[Y_t - Y_{g-1} | G=g, D=d]``.

    Discrete doses use the adjacent-dose difference within group ``g``; the
    lowest dose of the group is anchored at zero dose through the
    comparison group.  Continuous doses use a local-linear derivative fitted
    within group ``g``.
    """
    _check_cell(data, g, t)
    grid = _grid(data, grid)
    d = float(d)
    in_g = data.first_treated == g
    doses_g = np.unique(data.dose[in_g])
    if doses_g.size < 2:
        raise DegenerateDose(f"group {g} has a single dose; its slope is not identified", g=g)
    name = _comparison_name(comparison)
    if grid.is_discrete:
        j = np.searchsorted(doses_g, d)
        if j >= doses_g.size or doses_g[j] != d:
            raise EmptyCell(f"no units with G={g}, D={d:g}", g=g, dose=d)
        if j == 0:
            lvl = ate_gtd(data, g, t, d, comparison, grid=grid)
            return GroupTimeEstimate(g, t, d, lvl.value / d, "ACR_gtd", name, n_eff=lvl.n_eff)
        hi, n_hi = _treated_level(data, g, t, d, grid, spec)
        lo, n_lo = _treated_level(data, g, t, float(doses_g[j - 1]), grid, spec)
        return GroupTimeEstimate(g, t, d, (hi - lo) / (d - doses_g[j - 1]), "ACR_gtd", name,
                                 n_eff=n_hi + n_lo)
    dg = data.dose[in_g]
    if not dg.min() <= d <= dg.max():
        raise DoseOutOfSupport(f"dose {d:g} outside group {g} support", g=g, dose=d)
    _, slope, n = local_linear(dg, long_diff(data, g, t)[in_g], d, spec)
    return GroupTimeEstimate(g, t, d, slope, "ACR_gtd", name, n_eff=n)


# --------------------------------------------------------------------------
# cell enumeration


def group_time_cells(
    data: PanelDataset,
    estimand: str = "acr",
    comparison: str = "nyt",
    spec: SmootherSpec | None = None,
    periods: str | list[int] = "post",
    grid: DoseGrid | None = None,
) -> dict[tuple[int, int, float], GroupTimeEstimate]:
    """All ``(g, t, d)`` cells for treated groups at each group's observed doses.

    ``periods="post"`` gives ``t >= g``; ``"all"`` gives every ``t``; a list
    gives event times ``e`` (``t = g + e``).  Cells that cannot be estimated
    are left out, so callers asking for them get ``MissingCells``.
    """
    grid = _grid(data, grid)
    T = data.n_periods
    if estimand not in ("acr", "ate"):
        raise InvalidSpec("estimand must be 'acr' or 'ate'")
    out = {}
    for g in data.timing.treated_groups:
        if periods == "post":
            ts = range(g, T + 1)
        elif periods == "all":
            ts = range(1, T + 1)
        else:
            ts = [g + e for e in periods if 1 <= g + e <= T]
        for d in np.unique(data.dose[data.first_treated == g]):
            for t in ts:
                try:
                    if estimand == "acr":
                        est = acr_gtd(data, g, t, float(d), spec, comparison, grid)
                    else:
                        est = ate_gtd(data, g, t, float(d), comparison, spec=spec, grid=grid)
                except (EmptyCell, NoComparisonUnits, DegenerateDose, DoseOutOfSupport):
                    continue
                out[est.key] = est
    return out


# --------------------------------------------------------------------------
# aggregation


def _lookup(cells, g, t, d, missing):
    key = (int(g), int(t), float(d))
    if key not in cells:
        missing.append(key)
        return None
    return cells[key].value


def _raise_missing(missing):
    if missing:
        raise MissingCells(f"{len(missing)} required cell(s) unavailable", cells=missing[:50])


def _group_given_dose(data: PanelDataset, d: float, eligible, grid: DoseGrid) -> dict[int, float]:
    """``P(G=g | G eligible, D=d)`` from within-dose-atom (or kernel-weighted) frequencies."""
    G = data.first_treated
    keep = np.isin(G, list(eligible))
    if grid.is_discrete:
        w = (keep & (data.dose == d)).astype(float)
    else:
        x = data.dose[keep & (data.dose > 0)]
        h = rule_of_thumb(x) if x.size > 1 else 1.0
        u = (data.dose - d) / h
        w = np.where(keep & (np.abs(u) < 1), 0.75 * (1 - u * u), 0.0)
    tot = w.sum()
    if tot == 0:
        return {}
    return {int(g): float(w[G == g].sum() / tot) for g in eligible if w[G == g].sum() > 0}


def aggregate(
    data: PanelDataset,
    estimates,
    kind: str,
    g: int | None = None,
    d: float | None = None,
    e: int | None = None,
    grid: DoseGrid | None = None,
) -> AggregatedEffect:
    """Average group-time cells into a summary parameter.

    kind : {"group", "overall", "star", "es", "es_avg"}
        ``group`` needs ``g`` and ``d``; ``overall`` needs ``d``; ``es``
        needs ``e`` and ``d``; ``es_avg`` needs ``e``.
    """
    cells = estimates if isinstance(estimates, dict) else {c.key: c for c in estimates}
    grid = _grid(data, grid)
    T = data.n_periods
    treated = data.timing.treated_groups
    missing: list = []

    def group_avg(gg, dd, weight, weights):
        ts = range(gg, T + 1)
        vals = []
        for t in ts:
            v = _lookup(cells, gg, t, dd, missing)
            if v is not None:
                vals.append(v)
                key = (gg, t, float(dd))
                weights[key] = weights.get(key, 0.0) + weight / len(ts)
        return float(np.mean(vals)) if len(vals) == len(ts) else np.nan

    def overall(dd, weight, weights):
        probs = _group_given_dose(data, dd, treated, grid)
        if not probs:
            missing.append(("any", "any", float(dd)))
            return np.nan
        return sum(p * group_avg(gg, dd, weight * p, weights) for gg, p in probs.items())

    def es(ee, dd, weight, weights):
        eligible = [gg for gg in treated if 1 <= gg + ee <= T]
        probs = _group_given_dose(data, dd, eligible, grid)
        if not probs:
            missing.append(("any", "e=%d" % ee, float(dd)))
            return np.nan
        total = 0.0
        for gg, p in probs.items():
            v = _lookup(cells, gg, gg + ee, dd, missing)
            if v is not None:
                total += p * v
                key = (gg, gg + ee, float(dd))
                weights[key] = weights.get(key, 0.0) + weight * p
        return total

    def treated_doses():
        D = data.dose[data.first_treated <= T]
        vals, cnt = np.unique(D, return_counts=True)
        return vals, cnt / cnt.sum()

    weights: dict = {}
    if kind == "group":
        if g is None or d is None:
            raise InvalidSpec("group aggregation needs g and d")
        value = group_avg(int(g), float(d), 1.0, weights)
        out = AggregatedEffect("Group", value, g=int(g), dose=float(d))
    elif kind == "overall":
        if d is None:
            raise InvalidSpec("overall aggregation needs d")
        value = overall(float(d), 1.0, weights)
        out = AggregatedEffect("Overall", value, dose=float(d))
    elif kind == "star":
        # E[ACR^group(G, D) | G <= T] over treated units
        G = data.first_treated
        value = 0.0
        n_tr = np.sum(G <= T)
        for gg in treated:
            vals, cnt = np.unique(data.dose[G == gg], return_counts=True)
            for dd, c in zip(vals, cnt):
                w = c / n_tr
                value += w * group_avg(gg, float(dd), w, weights)
        out = AggregatedEffect("StarMP", float(value))
    elif kind == "es":
        if e is None or d is None:
            raise InvalidSpec("event-study aggregation needs e and d")
        value = es(int(e), float(d), 1.0, weights)
        out = AggregatedEffect("EventStudy", value, e=int(e), dose=float(d))
    elif kind == "es_avg":
        if e is None:
            raise InvalidSpec("event-study average needs e")
        vals, probs = treated_doses()
        value = sum(p * es(int(e), float(dd), p, weights) for dd, p in zip(vals, probs))
        out = AggregatedEffect("EventStudyAvg", float(value), e=int(e))
    else:
        raise InvalidSpec(f"unknown aggregation kind {kind!r}")
    _raise_missing(missing)
    out.weights_used = weights
    return out


def pretest(
    data: PanelDataset,
    e_min: int,
    comparison: str = "nyt",
    spec: SmootherSpec | None = None,
    grid: DoseGrid | None = None,
) -> list[AggregatedEffect]:
    """Event-study averages for ``e = e_min..-1`` (base period ``g - 1``).

    Group ``g`` at event time ``e`` uses ``Y_{g+e} - Y_{g-1}``; groups without
    period ``g + e`` in the panel drop out of that event time.
    """
    if e_min >= 0:
        raise InvalidSpec("e_min must be negative")
    grid = _grid(data, grid)
    es_list = list(range(e_min, 0))
    cells = group_time_cells(data, "acr", comparison, spec, periods=es_list, grid=grid)
    return [aggregate(data, cells, "es_avg", e=e, grid=grid) for e in es_list]
