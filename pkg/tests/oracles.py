"""Independent reference computations used as test oracles.

Nothing here imports package internals beyond ``PanelDataset`` so that the
package's own algebra is checked against separate code paths.
"""

from __future__ import annotations

import numpy as np


def twfe_dummy_ols(dose, outcome, first_treated) -> float:
    """TWFE slope from an explicit OLS with unit and period dummies."""
    dose = np.asarray(dose, float)
    Y = np.asarray(outcome, float)
    G = np.asarray(first_treated)
    n, T = Y.shape
    t = np.arange(1, T + 1)
    W = np.where(t[None, :] >= G[:, None], dose[:, None], 0.0)
    rows = n * T
    unit = np.repeat(np.arange(n), T)
    per = np.tile(np.arange(T), n)
    X = np.zeros((rows, 1 + n + T - 1))
    X[:, 0] = W.ravel()
    X[np.arange(rows), 1 + unit] = 1.0
    later = per > 0
    X[np.arange(rows)[later], n + per[later]] = 1.0
    coef, *_ = np.linalg.lstsq(X, Y.ravel(), rcond=None)
    return float(coef[0])


def bacon_binary(outcome, first_treated):
    """Two-group timing decomposition of a binary staggered TWFE slope.

    Returns a list of ``(kind, early, late, weight, estimate)`` where kind is
    ``"vs_never"``, ``"early_vs_late"`` (late group as control before it is
    treated) or ``"late_vs_early"`` (early group as control after it is
    treated).  Weights are the unnormalized variance shares divided by their
    total.
    """
    Y = np.asarray(outcome, float)
    G = np.asarray(first_treated)
    n, T = Y.shape
    groups = sorted(set(G.tolist()))
    never = [g for g in groups if g > T]
    timing = [g for g in groups if g <= T]
    share = {g: np.mean(G == g) for g in groups}
    Dbar = {g: (T - g + 1) / T for g in timing}

    def ybar(g, lo, hi):  # mean over periods lo..hi (inclusive, 1-based) for group g
        return Y[G == g][:, lo - 1:hi].mean()

    out = []
    for g in timing:
        for u in never:
            w = share[g] * share[u] * Dbar[g] * (1 - Dbar[g])
            est = (ybar(g, g, T) - ybar(g, 1, g - 1)) - (ybar(u, g, T) - ybar(u, 1, g - 1))
            out.append(("vs_never", g, u, w, est))
    for i, k in enumerate(timing):
        for l in timing[i + 1:]:
            nk, nl = share[k], share[l]
            w_k = nk * nl * (Dbar[k] - Dbar[l]) * (1 - Dbar[k])
            est_k = (ybar(k, k, l - 1) - ybar(k, 1, k - 1)) - (ybar(l, k, l - 1) - ybar(l, 1, k - 1))
            out.append(("early_vs_late", k, l, w_k, est_k))
            w_l = nk * nl * Dbar[l] * (Dbar[k] - Dbar[l])
            est_l = (ybar(l, l, T) - ybar(l, k, l - 1)) - (ybar(k, l, T) - ybar(k, k, l - 1))
            out.append(("late_vs_early", k, l, w_l, est_l))
    total = sum(r[3] for r in out)
    return [(kind, a, b, w / total, e) for kind, a, b, w, e in out]


def uniform_w1(d):
    """Derivative weights of the TWFE slope for ``D ~ U(0, 1)``."""
    d = np.asarray(d, float)
    return 6.0 * d * (1.0 - d)


# Frozen values for the staggered two-group example (doses {2,4} from period 3,
# {5,6} from period 5, effect d**1.5, noiseless).  Derived by hand:
#   within(g=3) = (4**1.5 - 2**1.5) / 2
#   mid_pre(3,5) = mean(d**1.5 | G=3) / mean(D | G=3)
WITHIN_G3 = (4**1.5 - 2**1.5) / 2  # 2.585786437626905
MID_PRE_35 = (2**1.5 + 4**1.5) / 2 / 3.0  # 1.8047378541243650
