"""Seedable data-generating processes with analytic oracle effects.

Families
--------
``two-period-exp``
    Two periods; doses exponential with mean ``dose_scale`` (default 3), the
    lowest quartile set to zero and the rest rounded to the nearest 0.5
    (never below 0.5).  Treatment-effect function ``(1 + d_i) ln(1 + D)``:
    each unit's causal response at its own dose is 1 and the selection-bias
    slope is ``ln(1 + d)``.  ``Y_i2 - Y_i1 = 1/3 + effect + noise``.
``four-group``
    Staggered design with an early group (doses 2 and 4) and a later group
    (doses 5 and 6) plus never-treated units; the effect is a one-time shift
    ``d**1.5`` from the first treated period on.
``constant-acr``
    Staggered design, effect ``theta * d`` from the first treated period on,
    common dose support across groups.
``ramp``
    As ``constant-acr`` but the effect grows with exposure length:
    ``d * (theta + ramp * (t - g))``.
``pre-trend``
    As ``constant-acr`` plus dose-proportional linear trends
    ``slope_g * D * t`` for treated groups, which violate parallel trends
    across doses before (and after) treatment.
``custom``
    Two-period design with the alternative effect function ``d_i ln(D)``
    (each unit's causal response is 1; selection-bias slope ``ln(d)``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InvalidSpec, NoAnalyticOracle
from .panel import PanelDataset

FAMILIES = ("two-period-exp", "four-group", "constant-acr", "ramp", "pre-trend", "custom")
ALIASES = {
    "TwoPeriodExponential": "two-period-exp",
    "FourGroupStaggered": "four-group",
    "ConstantACR": "constant-acr",
    "RampDynamics": "ramp",
    "PreTrend": "pre-trend",
    "Custom": "custom",
}

_DEFAULTS = {
    "two-period-exp": dict(n_units=100, noise_sd=3.0),
    "custom": dict(n_units=100, noise_sd=3.0),
    "four-group": dict(n_units=250, noise_sd=0.0),
    "constant-acr": dict(n_units=300, noise_sd=0.0),
    "ramp": dict(n_units=300, noise_sd=0.0),
    "pre-trend": dict(n_units=300, noise_sd=0.0),
}


@dataclass(frozen=True)
class DgpSpec:
    family: str
    n_units: int | None = None
    seed: int = 0
    noise_sd: float | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "family", ALIASES.get(self.family, self.family))
        if self.family not in FAMILIES:
            raise InvalidSpec(f"unknown family {self.family!r}; choose from {FAMILIES}")
        n = self.n
        if n < 2:
            raise InvalidSpec("n_units must be at least 2")
        if self.sd < 0:
            raise InvalidSpec("noise_sd must be non-negative")

    @property
    def n(self) -> int:
        return int(self.n_units if self.n_units is not None else _DEFAULTS[self.family]["n_units"])

    @property
    def sd(self) -> float:
        return float(self.noise_sd if self.noise_sd is not None else _DEFAULTS[self.family]["noise_sd"])


@dataclass
class OracleEffects:
    """Population effect functions matching a generated panel.

    Two-period functions take a dose; group-time functions take
    ``(g, t, d)``.  Functions a family cannot provide are ``None``.
    """

    att_dd: Callable[[float], float] | None = None
    acrt_dd: Callable[[float], float] | None = None
    selection_bias_slope: Callable[[float], float] | None = None
    ate_gtd: Callable[[int, int, float], float] | None = None
    acr_gtd: Callable[[int, int, float], float] | None = None
    constants: dict = field(default_factory=dict)

    def sample(self, doses) -> dict:
        """Effect functions evaluated on a dose grid (for JSON emission)."""
        doses = [float(d) for d in doses]
        out = {"dose": doses, **self.constants}
        for name in ("att_dd", "acrt_dd", "selection_bias_slope"):
            fn = getattr(self, name)
            if fn is not None:
                out[name] = [float(fn(d)) for d in doses]
        return out


# --------------------------------------------------------------------------
# dose laws


def exponential_doses(rng: np.random.Generator, n: int, scale: float = 3.0) -> np.ndarray:
    """Exponential draws; lowest quartile -> 0, the rest rounded to 0.5 (minimum 0.5)."""
    x = rng.exponential(scale, n)
    q = np.quantile(x, 0.25)
    rounded = np.maximum(np.round(x * 2.0) / 2.0, 0.5)
    return np.where(x <= q, 0.0, rounded)


def _main_effect(own, dose):
    return (1.0 + own) * np.log1p(dose)


def _alt_effect(own, dose):
    safe = np.where(dose > 0, dose, 1.0)
    return np.where(dose > 0, own * np.log(safe), 0.0)


# --------------------------------------------------------------------------
# generators


def _two_period(spec: DgpSpec, rng, effect, oracle: OracleEffects):
    n = spec.n
    scale = float(spec.params.get("dose_scale", 3.0))
    D = exponential_doses(rng, n, scale)
    alpha = rng.standard_normal(n)
    eps = rng.normal(0.0, spec.sd, size=(n, 2)) if spec.sd > 0 else np.zeros((n, 2))
    Y = np.empty((n, 2))
    Y[:, 0] = alpha + eps[:, 0]
    Y[:, 1] = alpha + 1.0 / 3.0 + effect(D, D) + eps[:, 1]
    return PanelDataset.from_arrays(D, Y), oracle


def _staggered(
    rng,
    n: int,
    T: int,
    cells: list[tuple[int, float]],
    effect: Callable,
    noise_sd: float,
    trend: Callable | None = None,
    unit_fe: bool = True,
):
    """Units split evenly over ``cells`` of (first-treated period, dose)."""
    idx = np.arange(n) % len(cells)
    G = np.array([cells[i][0] for i in idx], dtype=np.int64)
    D = np.array([cells[i][1] for i in idx], dtype=float)
    t = np.arange(1, T + 1)[None, :]
    alpha = rng.standard_normal(n)[:, None] if unit_fe else np.zeros((n, 1))
    base = alpha + t / 3.0
    if trend is not None:
        base = base + trend(G[:, None], t, D[:, None])
    treated = t >= G[:, None]
    eff = np.where(treated, effect(G[:, None], t, D[:, None]), 0.0)
    Y = base + eff
    if noise_sd > 0:
        Y = Y + rng.normal(0.0, noise_sd, size=Y.shape)
    return PanelDataset.from_arrays(D, Y, G)


def generate(spec: DgpSpec) -> tuple[PanelDataset, OracleEffects]:
    """Draw a panel and its oracle.  Identical specs give bitwise identical panels."""
    rng = np.random.default_rng(spec.seed)
    p = spec.params
    fam = spec.family
    if fam == "two-period-exp":
        oracle = OracleEffects(
            att_dd=lambda d: (1.0 + d) * np.log1p(d),
            acrt_dd=lambda d: 1.0,
            selection_bias_slope=lambda d: float(np.log1p(d)),
        )
        oracle.ate_gtd = lambda g, t, d: oracle.att_dd(d) if t >= g else 0.0
        return _two_period(spec, rng, _main_effect, oracle)
    if fam == "custom":
        oracle = OracleEffects(
            att_dd=lambda d: d * np.log(d) if d > 0 else 0.0,
            acrt_dd=lambda d: 1.0,
            selection_bias_slope=lambda d: float(np.log(d)),
        )
        return _two_period(spec, rng, _alt_effect, oracle)

    if fam == "four-group":
        T = int(p.get("T", 6))
        g, k = int(p.get("g", 3)), int(p.get("k", 5))
        if not 2 <= g < k <= T:
            raise InvalidSpec("four-group needs 2 <= g < k <= T")
        cells = [(g, 2.0), (g, 4.0), (k, 5.0), (k, 6.0)]
        if p.get("never_treated", True):
            cells.append((T + 1, 0.0))
        power = float(p.get("power", 1.5))
        effect = lambda G, t, d: d**power
        oracle = OracleEffects(
            ate_gtd=lambda gg, tt, d: d**power if tt >= gg else 0.0,
            acr_gtd=lambda gg, tt, d: power * d ** (power - 1) if tt >= gg else 0.0,
            constants={"T": T, "g": g, "k": k},
        )
        return _staggered(rng, spec.n, T, cells, effect, spec.sd, unit_fe=p.get("unit_fe", True)), oracle

    # constant-acr / ramp / pre-trend share a layout
    T = int(p.get("T", 5))
    groups = [int(x) for x in p.get("groups", (3, 4) if T >= 4 else (2,))]
    doses = [float(x) for x in p.get("doses", (1.0, 2.0, 3.0))]
    if any(not 2 <= gg <= T for gg in groups):
        raise InvalidSpec("groups must lie in 2..T")
    cells = [(gg, d) for gg in groups for d in doses]
    if p.get("never_treated", True):
        cells.append((T + 1, 0.0))
    theta = float(p.get("theta", 2.0))
    if fam == "constant-acr":
        effect = lambda G, t, d: theta * d
        oracle = OracleEffects(
            att_dd=lambda d: theta * d, acrt_dd=lambda d: theta, selection_bias_slope=lambda d: 0.0,
            ate_gtd=lambda g, t, d: theta * d if t >= g else 0.0,
            acr_gtd=lambda g, t, d: theta if t >= g else 0.0,
            constants={"theta": theta, "acr_star_mp": theta},
        )
        return _staggered(rng, spec.n, T, cells, effect, spec.sd), oracle
    if fam == "ramp":
        ramp = float(p.get("ramp", 1.0))
        effect = lambda G, t, d: d * (theta + ramp * (t - G))
        oracle = OracleEffects(
            ate_gtd=lambda g, t, d: d * (theta + ramp * (t - g)) if t >= g else 0.0,
            acr_gtd=lambda g, t, d: theta + ramp * (t - g) if t >= g else 0.0,
            constants={"theta": theta, "ramp": ramp},
        )
        return _staggered(rng, spec.n, T, cells, effect, spec.sd), oracle
    # pre-trend
    slopes = p.get("trend_slopes", {gg: 0.5 * (i + 1) for i, gg in enumerate(groups)})
    slopes = {int(a): float(b) for a, b in slopes.items()}
    trend = lambda G, t, d: np.vectorize(lambda gg: slopes.get(int(gg), 0.0))(G) * d * t
    effect = lambda G, t, d: theta * d
    oracle = OracleEffects(
        ate_gtd=lambda g, t, d: theta * d if t >= g else 0.0,
        acr_gtd=lambda g, t, d: theta if t >= g else 0.0,
        constants={"theta": theta, "trend_slopes": slopes},
    )
    return _staggered(rng, spec.n, T, cells, effect, spec.sd, trend=trend), oracle


# --------------------------------------------------------------------------
# TWFE oracle


def _weighted_slope_beta(D: np.ndarray, m: Callable[[np.ndarray], np.ndarray]) -> float:
    """Derivative-weighted average of the slopes of ``m`` on the atoms of ``D``.

    Uses weights ``(E[D|D>=d_j] - E[D]) P(D>=d_j) (d_j - d_{j-1}) / var(D)``
    with ``d_0 = 0``; independent of any outcome data.
    """
    d, cnt = np.unique(D, return_counts=True)
    p = cnt / D.size
    ED = float(np.dot(d, p))
    var = float(np.dot((d - ED) ** 2, p))
    p_ge = np.cumsum(p[::-1])[::-1]
    s_ge = np.cumsum((p * d)[::-1])[::-1]
    pos = d > 0
    dj = d[pos]
    prev = np.concatenate([[0.0], dj[:-1]])
    w = (s_ge[pos] - ED * p_ge[pos]) * (dj - prev) / var
    slopes = (m(dj) - m(prev)) / (dj - prev)
    if not np.any(d == 0):
        w[0] = 0.0
    return float(np.dot(w, slopes))


def oracle_twfe_target(spec: DgpSpec, n_draws: int = 1_000_000, finite_sample: bool = True,
                       seed: int | None = None) -> float:
    """Target of the two-period TWFE slope under the dose law of ``spec``.

    Integrates the derivative weights against the analytic path mean by
    Monte Carlo over ``n_draws`` dose draws.  With ``finite_sample=True``
    the draws are split into samples of ``spec.n`` units and the weighted
    slope is averaged across samples, which is the expectation of the OLS
    slope at that sample size; otherwise the draws form one large sample
    (the population limit).
    """
    if spec.family == "constant-acr":
        return float(spec.params.get("theta", 2.0))
    if spec.family not in ("two-period-exp", "custom"):
        raise NoAnalyticOracle(f"family {spec.family!r} has no analytic path mean")
    m = (lambda d: _main_effect(d, d)) if spec.family == "two-period-exp" else (lambda d: _alt_effect(d, d))
    scale = float(spec.params.get("dose_scale", 3.0))
    rng = np.random.default_rng(spec.seed + 7_919 if seed is None else seed)
    if not finite_sample:
        return _weighted_slope_beta(exponential_doses(rng, n_draws, scale), m)
    n = spec.n
    reps = max(1, n_draws // n)
    vals = [_weighted_slope_beta(exponential_doses(rng, n, scale), m) for _ in range(reps)]
    return float(np.mean(vals))


# --------------------------------------------------------------------------
# paired parallel-trends designs


def paired_pt_dgps(
    seed: int,
    n_units: int = 800,
    T: int = 4,
    noise_sd: float = 1.0,
    shared_draws: bool = False,
) -> tuple[PanelDataset, PanelDataset]:
    """Two panels that look alike before treatment.

    Both have one treated cohort starting in period ``T``, continuous doses
    ``U(0.5, 2.5)`` for three quarters of the units and untreated units
    otherwise, and identical untreated-outcome laws.  The first panel has
    selection on gains, effect ``(1 + d_i) ln(1 + D)``, so only standard
    parallel trends holds.  The second has the homogeneous effect ``D`` and
    satisfies strong parallel trends.  Both have causal response 1.  With
    ``shared_draws`` the two panels reuse the same random draws.  The matching
    oracle is :func:`paired_pt_oracle`.
    """
    if T < 3:
        raise InvalidSpec("paired designs need T >= 3")
    ss = np.random.SeedSequence(seed)
    child_a, child_b = ss.spawn(2)
    rngs = (np.random.default_rng(child_a), np.random.default_rng(child_a if shared_draws else child_b))
    panels = []
    for which, rng in zip(("pt", "strong"), rngs):
        n = n_units
        treated = rng.random(n) >= 0.25
        D = np.where(treated, rng.uniform(0.5, 2.5, n), 0.0)
        G = np.where(treated, T, T + 1)
        t = np.arange(1, T + 1)[None, :]
        alpha = rng.standard_normal(n)[:, None]
        Y = alpha + t / 3.0 + rng.normal(0.0, noise_sd, size=(n, T))
        post = t >= G[:, None]
        eff = _main_effect(D, D) if which == "pt" else D
        Y = Y + np.where(post, eff[:, None], 0.0)
        panels.append(PanelDataset.from_arrays(D, Y, G))
    return panels[0], panels[1]


def paired_pt_oracle(T: int = 4) -> OracleEffects:
    """Oracle of the selection-on-gains panel from :func:`paired_pt_dgps`."""
    return OracleEffects(
        att_dd=lambda d: (1.0 + d) * np.log1p(d),
        acrt_dd=lambda d: 1.0,
        selection_bias_slope=lambda d: float(np.log1p(d)),
        constants={"T": T, "g": T},
    )
