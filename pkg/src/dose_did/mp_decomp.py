"""Multi-period TWFE slope and its four-comparison decomposition.

With staggered adoption the TWFE slope is a variance-weighted average of

* within-group dose comparisons (``within``),
* early-vs-later group comparisons before the later group starts (``mid_pre``),
* later-vs-already-treated comparisons (``post_mid``),
* long comparisons between common post and pre windows (``post_pre``).

Windows for a pair ``g < k``: ``PRE(g) = 1..g-1``, ``MID(g,k) = g..k-1`` and
``POST(k) = k..T``.  The never-treated group enters as ``k = T + 1`` with an
empty ``POST`` window.  All moments are plug-in sample moments, so the
decomposition reproduces the within-estimator slope to rounding error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import (
    DegenerateDose,
    EmptyWindow,
    EqualMeanDoses,
    InvalidSpec,
    NoUntreatedUnits,
    ZeroDoseVariance,
)
from .panel import PanelDataset, dose_grid
from .smoothing import local_linear


def two_way_demean(X: np.ndarray) -> np.ndarray:
    """``X_it - Xbar_i - Xbar_t + Xbar`` for a balanced (n, T) array."""
    return X - X.mean(axis=1, keepdims=True) - X.mean(axis=0, keepdims=True) + X.mean()


def twfe_beta_mp(data: PanelDataset) -> float:
    """Within-estimator slope of ``Y_it`` on exposure ``W_it`` with unit and period effects."""
    W = data.timing.exposure
    Wdd = two_way_demean(W)
    denom = float(np.mean(Wdd * Wdd))
    if not denom > 1e-14 * max(float(np.mean(W * W)), 1e-300):
        raise ZeroDoseVariance("exposure has no variation after removing unit and period effects")
    return float(np.mean(data.outcome * Wdd) / denom)


@dataclass(frozen=True)
class TwfeMpInternals:
    groups: tuple[int, ...]
    gbar: dict[int, float]
    share: dict[int, float]
    dose_mean: dict[int, float]
    dose_var: dict[int, float]
    denom: float
    n_periods: int

    def v(self, g: int, t: int) -> float:
        """Timing deviation ``1{t >= g} - gbar_g`` (identically 0 for never-treated)."""
        return (1.0 if t >= g else 0.0) - self.gbar[g]


def internals(data: PanelDataset) -> TwfeMpInternals:
    tm = data.timing
    D = data.dose
    G = data.first_treated
    mean = {g: float(D[G == g].mean()) for g in tm.groups}
    var = {g: float(np.mean((D[G == g] - mean[g]) ** 2)) for g in tm.groups}
    Wdd = two_way_demean(tm.exposure)
    return TwfeMpInternals(tm.groups, dict(tm.gbar), dict(tm.group_shares), mean, var,
                           float(np.mean(Wdd * Wdd)), data.n_periods)


def _windows(g: int, k: int, T: int):
    pre = (1, g - 1)
    mid = (g, min(k, T + 1) - 1)
    post = (k, T)
    return pre, mid, post


def _wavg(Y: np.ndarray, window: tuple[int, int]) -> np.ndarray:
    a, b = window
    if b < a:
        raise EmptyWindow(f"empty window {window}")
    return Y[:, a - 1 : b].mean(axis=1)


def delta_within(data: PanelDataset, g: int) -> float:
    """Within-group slope of ``Ybar^POST(g) - Ybar^PRE(g)`` on dose."""
    T = data.n_periods
    sel = data.first_treated == g
    Y = data.outcome[sel]
    D = data.dose[sel]
    path = _wavg(Y, (g, T)) - _wavg(Y, (1, g - 1))
    dc = D - D.mean()
    var = float(np.mean(dc * dc))
    if not var > 0:
        raise DegenerateDose(f"group {g} has no dose variation", g=g)
    return float(np.mean(dc * (path - path.mean())) / var)


def _path_gap(data, g, k, post, pre):
    """``E[Ybar^post - Ybar^pre | G=g] - E[Ybar^post - Ybar^pre | G=k]``."""
    G = data.first_treated
    Y = data.outcome
    path = _wavg(Y, post) - _wavg(Y, pre)
    return float(path[G == g].mean() - path[G == k].mean())


def delta_terms(data: PanelDataset, g: int, k: int) -> dict[str, float | None]:
    """The four elementary comparisons for the pair ``g < k``.

    Returns a dict with keys ``within``, ``mid_pre``, ``post_mid``,
    ``post_pre``.  ``post_mid`` and ``post_pre`` are ``None`` when ``k`` is
    the never-treated group (no ``POST(k)`` window); ``post_pre`` is ``None``
    when the two groups have the same mean dose (its weight is then zero).
    ``within`` is ``None`` when group ``g`` has a single dose.
    """
    T = data.n_periods
    if not 2 <= g < k <= T + 1:
        raise InvalidSpec(f"need 2 <= g < k <= T+1, got g={g}, k={k}")
    G = data.first_treated
    if not (np.any(G == g) and np.any(G == k)):
        raise InvalidSpec(f"groups {g} and {k} must both be present")
    pre, mid, post = _windows(g, k, T)
    Eg = float(data.dose[G == g].mean())
    Ek = float(data.dose[G == k].mean())
    try:
        within = delta_within(data, g)
    except DegenerateDose:
        within = None
    mid_pre = _path_gap(data, g, k, mid, pre) / Eg
    if k > T:
        return {"within": within, "mid_pre": mid_pre, "post_mid": None, "post_pre": None}
    post_mid = -_path_gap(data, g, k, post, mid) / Ek
    if Eg == Ek:
        post_pre = None
    else:
        # same value whichever group has the higher mean dose
        post_pre = _path_gap(data, g, k, post, pre) / (Eg - Ek)
    return {"within": within, "mid_pre": mid_pre, "post_mid": post_mid, "post_pre": post_pre}


def raw_weights(inn: TwfeMpInternals):
    """Un-normalised weights; they sum to ``inn.denom``."""
    treated = [g for g in inn.groups if g <= inn.n_periods]
    within = {}
    for g in treated:
        gb = inn.gbar[g]
        within[g] = inn.dose_var[g] * (1 - gb) * gb * inn.share[g]
    pairs = {}
    for i, g in enumerate(inn.groups):
        if g > inn.n_periods:
            continue
        for k in inn.groups[i + 1 :]:
            gg, gk = inn.gbar[g], inn.gbar[k]
            pp = inn.share[g] * inn.share[k]  # (p_g + p_k)^2 p_{g|gk} (1 - p_{g|gk})
            Eg, Ek = inn.dose_mean[g], inn.dose_mean[k]
            pairs[(g, k)] = {
                "mid_pre": Eg * Eg * (1 - gg) * (gg - gk) * pp,
                "post_mid": Ek * Ek * gk * (gg - gk) * pp,
                "post_pre": (Eg - Ek) ** 2 * gk * (1 - gg) * pp,
            }
    return within, pairs


@dataclass
class MpDecompositionReport:
    beta_twfe: float
    denom: float
    within_terms: dict[int, tuple[float, float | None]]
    timing_terms: dict[tuple[int, int], dict[str, tuple[float, float | None]]]
    nuisance: dict[tuple[int, int], dict[str, float | None]] = field(default_factory=dict)
    raw_weight_total: float = 0.0
    residual: float = 0.0
    flags: list[str] = field(default_factory=list)

    def weighted_terms(self):
        for g, (w, d) in sorted(self.within_terms.items()):
            yield "within", g, None, w, d
        for (g, k), comps in sorted(self.timing_terms.items()):
            for name in ("mid_pre", "post_mid", "post_pre"):
                w, d = comps[name]
                yield name, g, k, w, d

    def weight_total(self) -> float:
        return math.fsum(w for *_, w, _ in self.weighted_terms())

    def reconstruct(self) -> float:
        return math.fsum(w * d for *_, w, d in self.weighted_terms() if w != 0.0 and d is not None)

    def table(self) -> pd.DataFrame:
        rows = []
        for name, g, k, w, d in self.weighted_terms():
            nz = self.nuisance.get((g, k), {}) if k is not None else {}
            rows.append({
                "term_type": name, "g": g, "k": k, "weight": w, "delta": d,
                "nuisance_dynamics": nz.get("dynamics_term") if name == "post_mid" else None,
                "nuisance_heterogeneity": nz.get("heterogeneity_term") if name == "post_pre" else None,
            })
        out = pd.DataFrame(rows, columns=["term_type", "g", "k", "weight", "delta",
                                          "nuisance_dynamics", "nuisance_heterogeneity"])
        out["k"] = out["k"].astype("Int64")
        return out

    def to_dict(self) -> dict:
        return {
            "beta_twfe": self.beta_twfe,
            "residual": self.residual,
            "weight_total": self.weight_total(),
            "denominator": self.denom,
            "raw_weight_total": self.raw_weight_total,
            "flags": list(self.flags),
            "terms": self.table().astype(object).where(self.table().notna(), None).to_dict("records"),
            "nuisance": [
                {"g": g, "k": k, **v} for (g, k), v in sorted(self.nuisance.items())
            ],
        }


def decompose_mp(data: PanelDataset, with_nuisance: bool = True) -> MpDecompositionReport:
    """Weights and comparisons whose weighted sum is the TWFE slope."""
    beta = twfe_beta_mp(data)
    inn = internals(data)
    raw_within, raw_pairs = raw_weights(inn)
    denom = inn.denom
    within_terms = {}
    for g, w in raw_within.items():
        try:
            d = delta_within(data, g)
        except DegenerateDose:
            d = None
        within_terms[g] = (0.0 if d is None else w / denom, d)
    timing_terms = {}
    for (g, k), ws in raw_pairs.items():
        deltas = delta_terms(data, g, k)
        timing_terms[(g, k)] = {
            name: (0.0 if deltas[name] is None else ws[name] / denom, deltas[name])
            for name in ("mid_pre", "post_mid", "post_pre")
        }
    raw_total = math.fsum(list(raw_within.values()) + [v for ws in raw_pairs.values() for v in ws.values()])
    report = MpDecompositionReport(beta, denom, within_terms, timing_terms, raw_weight_total=raw_total)
    report.residual = beta - report.reconstruct()
    if with_nuisance and np.any(data.dose == 0):
        T = data.n_periods
        for (g, k) in raw_pairs:
            if k <= T:
                report.nuisance[(g, k)] = _nuisance_with_contrib(data, g, k, report)
    return report


def _nuisance_with_contrib(data, g, k, report):
    nz = nuisance_diagnostics(data, g, k)
    w_pm, _ = report.timing_terms[(g, k)]["post_mid"]
    w_pp, _ = report.timing_terms[(g, k)]["post_pre"]
    Ek = float(data.dose[data.first_treated == k].mean())
    dyn = nz["dynamics_term"]
    het = nz["heterogeneity_term"]
    # both corrections enter their comparison with a minus sign
    nz["dynamics_contribution"] = -w_pm * dyn / Ek
    nz["heterogeneity_contribution"] = None if het is None else -w_pp * het
    return nz


def nuisance_diagnostics(data: PanelDataset, g: int, k: int) -> dict[str, float | None]:
    """Sample analogues of the nuisance corrections for the pair ``g < k <= T``.

    ``dynamics_term``: change in group ``g``'s path relative to untreated units
    between ``MID(g,k)`` and ``POST(k)``, i.e. treatment-effect dynamics of the
    already-treated comparison group.

    ``heterogeneity_term``: average over group ``k``'s doses of the gap between
    the two groups' dose-specific long paths, scaled by the mean-dose gap.
    ``None`` when the groups share a mean dose or group ``g`` has no units at
    some dose of group ``k``.
    """
    T = data.n_periods
    if not 2 <= g < k <= T:
        raise InvalidSpec(f"need 2 <= g < k <= T, got g={g}, k={k}")
    untreated = data.dose == 0
    if not untreated.any():
        raise NoUntreatedUnits("nuisance paths are measured against untreated units")
    G = data.first_treated
    Y = data.outcome
    pre, mid, post = _windows(g, k, T)
    post_mid = _wavg(Y, post) - _wavg(Y, mid)
    dynamics = float(post_mid[G == g].mean() - post_mid[untreated].mean())

    Eg = float(data.dose[G == g].mean())
    Ek = float(data.dose[G == k].mean())
    het = None
    if Eg != Ek:
        long_path = _wavg(Y, post) - _wavg(Y, pre)
        het = _dose_path_gap(data, long_path, g, k)
        if het is not None:
            het /= Eg - Ek
    return {"dynamics_term": dynamics, "heterogeneity_term": het}


def _dose_path_gap(data, path, g, k):
    """``E[m_k(D) - m_g(D) | G=k]`` where ``m_j(d) = E[path | G=j, D=d]``."""
    G = data.first_treated
    Dk = data.dose[G == k]
    doses, cnt = np.unique(Dk, return_counts=True)
    grid = dose_grid(data)
    gaps = []
    for d in doses:
        mk_sel = (G == k) & (data.dose == d)
        if grid.is_discrete:
            mg_sel = (G == g) & (data.dose == d)
            if not mg_sel.any():
                return None
            mg = path[mg_sel].mean()
            mk = path[mk_sel].mean()
        else:
            Dg = data.dose[G == g]
            if not Dg.min() <= d <= Dg.max():
                return None
            mg = local_linear(Dg, path[G == g], d)[0]
            mk = local_linear(Dk, path[G == k], d)[0]
        gaps.append(mk - mg)
    return float(np.dot(gaps, cnt) / cnt.sum())
