"""Two-period TWFE slope and its exact decompositions.

All decompositions are computed on the empirical measure of the sample: each
distinct observed dose is an atom with share ``p_l`` and path mean
``m(l) = mean(dY | D = l)``.  On that measure the identities are algebraic, so
every report reproduces the OLS slope up to floating-point rounding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .baseline import two_period_arrays
from .errors import InvalidSpec, NoUntreatedUnits, ZeroDoseVariance
from .panel import PanelDataset, dose_grid

LEVELS_WARNING = (
    "levels weights sum to zero; the weighted sum of level effects should not be "
    "read as an approximation to any level effect"
)
METHODS = ("mechanical", "wald2x2", "alt-acr", "levels")


@dataclass
class WeightCurve:
    name: str
    points: np.ndarray
    values: np.ndarray
    normalization: str  # "SumsToOne" | "SumsToZero"
    positivity: str  # "AllNonNegative" | "MayBeNegative"

    def total(self) -> float:
        return float(np.sum(self.values))


@dataclass
class Term:
    label: str
    weight: float
    component: float | None
    kind: str = ""
    low: float | None = None
    high: float | None = None

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "weight": self.weight,
            "component": self.component,
            "kind": self.kind,
            "low": self.low,
            "high": self.high,
        }


@dataclass
class DecompositionReport:
    method: str
    beta_twfe: float
    terms: list[Term]
    residual: float = 0.0
    flags: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.residual = self.beta_twfe - self.reconstruct()

    def reconstruct(self) -> float:
        return float(
            _kahan(t.weight * t.component for t in self.terms if t.weight != 0.0 and t.component is not None)
        )

    def weight_total(self) -> float:
        return float(_kahan(t.weight for t in self.terms))

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "beta_twfe": self.beta_twfe,
            "residual": self.residual,
            "weight_total": self.weight_total(),
            "n_terms": len(self.terms),
            "flags": list(self.flags),
            "warnings": list(self.warnings),
            "terms": [t.to_dict() for t in self.terms],
        }


def _kahan(values) -> float:
    total = 0.0
    comp = 0.0
    for v in values:
        y = v - comp
        t = total + y
        comp = (t - total) - y
        total = t
    return total


@dataclass(frozen=True)
class _Atoms:
    dose: np.ndarray  # distinct doses incl. 0 if present, ascending
    share: np.ndarray
    mean_dy: np.ndarray
    count: np.ndarray
    mean_d: float
    var_d: float
    beta: float


def _atoms(data: PanelDataset) -> _Atoms:
    dy, D = two_period_arrays(data)
    d, inv, cnt = np.unique(D, return_inverse=True, return_counts=True)
    n = D.size
    mean_dy = np.bincount(inv, weights=dy) / cnt
    ED = D.mean()
    dc = D - ED
    var = float(np.mean(dc * dc))
    if not var > 0:
        raise ZeroDoseVariance("all units have the same dose")
    beta = float(np.mean(dc * (dy - dy.mean())) / var)
    return _Atoms(d, cnt / n, mean_dy, cnt, float(ED), var, beta)


def twfe_beta_2p(data: PanelDataset) -> float:
    """OLS slope of ``Y_2 - Y_1`` on the dose (with intercept)."""
    return _atoms(data).beta


# --------------------------------------------------------------------------
# mechanical (derivative) weights


def w1_density(data_or_dose, at) -> np.ndarray:
    """Density-form weight ``(E[D|D>=l] - E[D]) P(D>=l) / var(D)`` at each ``l``.

    Evaluated on the empirical dose distribution.  Accepts a panel or a raw
    dose array.
    """
    if isinstance(data_or_dose, PanelDataset):
        D = data_or_dose.dose
    else:
        D = np.asarray(data_or_dose, dtype=float)
    at = np.atleast_1d(np.asarray(at, dtype=float))
    ED = D.mean()
    var = np.mean((D - ED) ** 2)
    if not var > 0:
        raise ZeroDoseVariance("all units have the same dose")
    Ds = np.sort(D)
    n = Ds.size
    # tail sums of D over D >= l
    tail = np.concatenate([np.cumsum(Ds[::-1])[::-1], [0.0]])
    idx = np.searchsorted(Ds, at, side="left")
    s_tail = tail[idx] / n
    p_tail = (n - idx) / n
    return (s_tail - ED * p_tail) / var


def mechanical_weights(data: PanelDataset) -> tuple[WeightCurve, float]:
    """Discrete derivative weights over the positive doses and the anchor weight.

    The curve holds, for each positive dose ``d_j``, the weight on the
    adjacent-dose slope ending at ``d_j`` (with ``d_0 = 0``); the values sum
    to one.  The anchor ``w0`` is the weight on the lowest slope
    ``(m(d_1) - m(0)) / d_1``; it is also the curve's first entry.
    """
    a = _atoms(data)
    pos = a.dose > 0
    d = a.dose[pos]
    # P(D >= d_j) and E[D 1{D >= d_j}] over all atoms
    p_ge = np.cumsum(a.share[::-1])[::-1][pos]
    s_ge = np.cumsum((a.share * a.dose)[::-1])[::-1][pos]
    prev = np.concatenate([[0.0], d[:-1]])
    w = (s_ge - a.mean_d * p_ge) * (d - prev) / a.var_d
    if not np.any(a.dose == 0):
        # E[D | D >= d_1] = E[D]: the anchor term vanishes exactly
        w[0] = 0.0
    curve = WeightCurve("W1_Mechanical", d, w, "SumsToOne", "AllNonNegative")
    return curve, float(w[0])


def decompose_mechanical(data: PanelDataset) -> DecompositionReport:
    """TWFE slope as a weighted average of adjacent-dose slopes of the path mean."""
    a = _atoms(data)
    curve, w0 = mechanical_weights(data)
    has_untreated = bool(a.dose[0] == 0)
    m_pos = a.mean_dy[a.dose > 0]
    m_prev = np.concatenate([[a.mean_dy[0] if has_untreated else np.nan], m_pos[:-1]])
    prev = np.concatenate([[0.0], curve.points[:-1]])
    terms = []
    for j, (d, w) in enumerate(zip(curve.points, curve.values)):
        comp = (m_pos[j] - m_prev[j]) / (d - prev[j])
        kind = "anchor" if j == 0 else "slope"
        terms.append(Term(f"slope[{prev[j]:g},{d:g}]", float(w),
                          None if np.isnan(comp) else float(comp), kind, float(prev[j]), float(d)))
    report = DecompositionReport("mechanical", a.beta, terms)
    if hump_shaped(data):
        report.flags.append("HumpShapedWeights")
    return report


def dose_density(data: PanelDataset, at) -> np.ndarray:
    """Density of positive doses: atom shares (discrete) or a Gaussian KDE (continuous)."""
    D = data.dose[data.dose > 0]
    at = np.atleast_1d(np.asarray(at, dtype=float))
    grid = dose_grid(data)
    if grid.is_discrete:
        d, cnt = np.unique(D, return_counts=True)
        lookup = dict(zip(d.tolist(), (cnt / D.size).tolist()))
        return np.array([lookup.get(float(x), 0.0) for x in at])
    from scipy.stats import gaussian_kde

    return gaussian_kde(D)(at)


def hump_shaped(data: PanelDataset, tolerance: float = 0.10) -> bool:
    """True when the weight curve peaks away from the dose-density peak.

    The gap between the two argmax doses is compared with ``tolerance`` times
    the width of the positive-dose support.
    """
    grid = dose_grid(data)
    if grid.points.size < 3:
        return False
    if grid.is_discrete:
        pts = grid.points
    else:
        pts = np.linspace(grid.d_L, grid.d_U, 512)
    w = w1_density(data, pts)
    f = dose_density(data, pts)
    width = grid.d_U - grid.d_L
    return bool(abs(pts[np.argmax(w)] - pts[np.argmax(f)]) > tolerance * width)


def weight_table(data: PanelDataset, n_grid: int = 200) -> pd.DataFrame:
    """Plot-ready ``(dose, weight, density)`` rows for the derivative weights."""
    grid = dose_grid(data)
    pts = grid.points if grid.is_discrete else np.linspace(grid.d_L, grid.d_U, n_grid)
    return pd.DataFrame({"dose": pts, "weight": w1_density(data, pts), "density": dose_density(data, pts)})


# --------------------------------------------------------------------------
# other decompositions


def decompose_wald2x2(data: PanelDataset) -> DecompositionReport:
    """TWFE slope as a variance-weighted average of all pairwise Wald-DiDs."""
    a = _atoms(data)
    terms = []
    K = a.dose.size
    for i in range(K):
        for j in range(i + 1, K):
            lo, hi = a.dose[i], a.dose[j]
            w = (hi - lo) ** 2 * a.share[i] * a.share[j] / a.var_d
            comp = (a.mean_dy[j] - a.mean_dy[i]) / (hi - lo)
            kind = "untreated" if lo == 0 else "treated"
            terms.append(Term(f"wald[{lo:g},{hi:g}]", float(w), float(comp), kind, float(lo), float(hi)))
    return DecompositionReport("wald2x2", a.beta, terms)


def _dose_atoms(data: PanelDataset):
    D = data.dose
    d, cnt = np.unique(D, return_counts=True)
    ED = D.mean()
    var = float(np.mean((D - ED) ** 2))
    if not var > 0:
        raise ZeroDoseVariance("all units have the same dose")
    return d, cnt / D.size, float(ED), var


def alt_acr_weights(data: PanelDataset) -> WeightCurve:
    """Weights ``(l - E[D]) l p_l / var(D)`` over positive doses; they sum to one."""
    d, p, ED, var = _dose_atoms(data)
    pos = d > 0
    w = (d[pos] - ED) * d[pos] * p[pos] / var
    return WeightCurve("AltACR", d[pos], w, "SumsToOne",
                       "AllNonNegative" if np.all(w >= 0) else "MayBeNegative")


def levels_weights(data: PanelDataset) -> WeightCurve:
    """Weights ``(l - E[D]) p_l / var(D)`` over all dose atoms, untreated included; they sum to zero."""
    d, p, ED, var = _dose_atoms(data)
    w = (d - ED) * p / var
    return WeightCurve("Levels", d, w, "SumsToZero",
                       "AllNonNegative" if np.all(w >= 0) else "MayBeNegative")


def _need_untreated(a: _Atoms) -> None:
    if a.dose[0] != 0:
        raise NoUntreatedUnits("this decomposition compares every dose with untreated units")


def decompose_alt_acr(data: PanelDataset) -> DecompositionReport:
    """TWFE slope as a weighted sum of per-dose-unit level effects (weights may be negative)."""
    a = _atoms(data)
    _need_untreated(a)
    m0 = a.mean_dy[0]
    curve = alt_acr_weights(data)
    terms = []
    for l, w, m in zip(a.dose[1:], curve.values, a.mean_dy[1:]):
        terms.append(Term(f"per_dose[{l:g}]", float(w), float((m - m0) / l), "per_dose", 0.0, float(l)))
    report = DecompositionReport("alt-acr", a.beta, terms)
    if any(t.weight < 0 for t in terms):
        report.flags.append("NegativeWeightPresent")
    return report


def decompose_levels(data: PanelDataset) -> DecompositionReport:
    """TWFE slope as a zero-sum weighted combination of level effects.

    The untreated atom is kept as an explicit term (component 0) so the
    weights sum to zero on the empirical measure.
    """
    a = _atoms(data)
    _need_untreated(a)
    m0 = a.mean_dy[0]
    curve = levels_weights(data)
    terms = []
    for l, w, m in zip(a.dose, curve.values, a.mean_dy):
        terms.append(Term(f"level[{l:g}]", float(w), float(m - m0), "level" if l > 0 else "untreated",
                          0.0, float(l)))
    report = DecompositionReport("levels", a.beta, terms, warnings=[LEVELS_WARNING])
    if any(t.weight < 0 for t in terms[1:]):
        report.flags.append("NegativeWeightPresent")
    return report


def decompose(data: PanelDataset, method: str) -> DecompositionReport:
    try:
        fn = {
            "mechanical": decompose_mechanical,
            "wald2x2": decompose_wald2x2,
            "alt-acr": decompose_alt_acr,
            "levels": decompose_levels,
        }[method]
    except KeyError:
        raise InvalidSpec(f"method must be one of {METHODS}") from None
    return fn(data)
