"""Panel ingestion, validation and timing.

A :class:`PanelDataset` is stored in wide form (one row per unit, one column
per period) because the panel is balanced by construction.  Periods are
re-indexed to ``1..T``; the original labels are kept in ``period_labels``.
Never-treated units carry the sentinel first-treatment period ``T + 1``.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import (
    DoseChangesPostTreatment,
    EmptyCell,
    InvalidSpec,
    MissingColumn,
    NegativeDose,
    NoPositiveDose,
    TreatedInFirstPeriod,
    UnbalancedPanel,
)

DEFAULT_SCHEMA = {"unit": "unit", "period": "period", "dose": "dose", "outcome": "outcome"}
DISCRETE_THRESHOLD = 50


class InconsistentTiming(InvalidSpec):
    """Timing column disagrees with the dose (e.g. treated at g with dose 0)."""


@dataclass(frozen=True, eq=False)
class PanelDataset:
    """Validated balanced panel.

    Attributes
    ----------
    unit_ids : ndarray, shape (n,)
        Opaque unit identifiers (kept as strings or ints as read).
    period_labels : ndarray, shape (T,)
        Original period labels; internal period ``t`` is ``period_labels[t-1]``.
    dose : ndarray, shape (n,)
        Unit dose ``D_i`` (0 for never-treated units).
    outcome : ndarray, shape (n, T)
        Outcomes ``Y_it``.
    first_treated : ndarray of int, shape (n,)
        Timing group ``G_i`` in ``2..T`` or ``T + 1`` for never-treated units.
    """

    unit_ids: np.ndarray
    period_labels: np.ndarray
    dose: np.ndarray
    outcome: np.ndarray
    first_treated: np.ndarray

    def __post_init__(self):
        for name in ("dose", "outcome", "first_treated"):
            arr = getattr(self, name)
            arr.setflags(write=False)
        if self.outcome.ndim != 2 or self.outcome.shape[0] != self.dose.shape[0]:
            raise InvalidSpec("outcome must be (n_units, n_periods)")
        if self.n_periods < 2:
            raise InvalidSpec("panel needs at least two periods")
        _validate_doses(self.dose)
        _validate_groups(self.first_treated, self.dose, self.n_periods)

    @classmethod
    def from_arrays(
        cls,
        dose: Sequence[float],
        outcome,
        first_treated: Sequence[int] | None = None,
        unit_ids: Sequence | None = None,
        period_labels: Sequence | None = None,
    ) -> "PanelDataset":
        """Build a panel from wide arrays.

        ``first_treated`` may be omitted only for two-period data, where
        treated units (``dose > 0``) start treatment in period 2.
        """
        dose = np.asarray(dose, dtype=float).copy()
        outcome = np.array(outcome, dtype=float, copy=True)
        n, T = outcome.shape
        if first_treated is None:
            if T != 2:
                raise InvalidSpec("first_treated is required when T > 2")
            first_treated = np.where(dose > 0, 2, 3)
        first_treated = np.asarray(first_treated, dtype=np.int64).copy()
        unit_ids = np.arange(1, n + 1) if unit_ids is None else np.asarray(unit_ids)
        period_labels = np.arange(1, T + 1) if period_labels is None else np.asarray(period_labels)
        return cls(unit_ids, period_labels, dose, outcome, first_treated)

    @property
    def n_units(self) -> int:
        return int(self.dose.shape[0])

    @property
    def n_periods(self) -> int:
        return int(self.outcome.shape[1])

    @property
    def never_treated(self) -> int:
        """Sentinel group value for never-treated units."""
        return self.n_periods + 1

    @cached_property
    def timing(self) -> "TimingIndex":
        return derive_timing(self)

    @cached_property
    def delta_y(self) -> np.ndarray:
        """``Y_2 - Y_1`` for two-period panels (last minus first period otherwise)."""
        return self.outcome[:, -1] - self.outcome[:, 0]

    def exposure(self) -> np.ndarray:
        t = np.arange(1, self.n_periods + 1)
        return np.where(t[None, :] >= self.first_treated[:, None], self.dose[:, None], 0.0)

    def take(self, rows: np.ndarray) -> "PanelDataset":
        """Sub-panel (rows may repeat; repeated units get fresh ids)."""
        rows = np.asarray(rows)
        ids = self.unit_ids[rows]
        if len(np.unique(rows)) != len(rows):
            ids = np.array([f"{u}#{j}" for j, u in enumerate(ids)], dtype=object)
        return PanelDataset(
            ids,
            self.period_labels,
            self.dose[rows].copy(),
            self.outcome[rows].copy(),
            self.first_treated[rows].copy(),
        )

    def with_outcome(self, outcome) -> "PanelDataset":
        return PanelDataset(
            self.unit_ids, self.period_labels, self.dose.copy(),
            np.array(outcome, dtype=float), self.first_treated.copy(),
        )

    def with_dose(self, dose) -> "PanelDataset":
        return PanelDataset(
            self.unit_ids, self.period_labels, np.array(dose, dtype=float),
            self.outcome.copy(), self.first_treated.copy(),
        )

    def equals(self, other: "PanelDataset") -> bool:
        return (
            np.array_equal(self.unit_ids.astype(str), other.unit_ids.astype(str))
            and np.array_equal(self.period_labels.astype(str), other.period_labels.astype(str))
            and np.array_equal(self.dose, other.dose)
            and np.array_equal(self.outcome, other.outcome)
            and np.array_equal(self.first_treated, other.first_treated)
        )

    def to_frame(self) -> pd.DataFrame:
        """Canonical long frame: unit, period, dose, outcome, group, exposure."""
        n, T = self.outcome.shape
        return pd.DataFrame(
            {
                "unit": np.repeat(self.unit_ids, T),
                "period": np.tile(self.period_labels, n),
                "dose": np.repeat(self.dose, T),
                "outcome": self.outcome.ravel(),
                "group": np.repeat(self.group_labels(), T),
                "exposure": self.exposure().ravel(),
            }
        )

    def group_labels(self) -> np.ndarray:
        """First-treatment period as an original period label (0 = never treated)."""
        T = self.n_periods
        treated = self.first_treated <= T
        labels = np.zeros(self.n_units, dtype=self.period_labels.dtype)
        labels[treated] = self.period_labels[self.first_treated[treated] - 1]
        return labels

    def to_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False)


def _validate_doses(dose: np.ndarray) -> None:
    if not np.all(np.isfinite(dose)):
        raise InvalidSpec("dose contains non-finite values")
    if np.any(dose < 0):
        raise NegativeDose("negative dose values", count=int(np.sum(dose < 0)))
    if not np.any(dose > 0):
        raise NoPositiveDose("at least one positive dose is required")


def _validate_groups(G: np.ndarray, dose: np.ndarray, T: int) -> None:
    if np.any(G <= 1):
        bad = np.flatnonzero(G <= 1)
        raise TreatedInFirstPeriod("units treated in the first period are excluded", rows=bad[:20].tolist())
    if np.any(G > T + 1):
        raise InconsistentTiming(f"first-treatment period beyond T+1={T + 1}")
    if np.any((G <= T) & (dose == 0)):
        raise InconsistentTiming("units 'treated' with dose 0 are not supported")
    if np.any((G == T + 1) & (dose > 0)):
        raise InconsistentTiming("units with positive dose must be treated by period T")


# --------------------------------------------------------------------------
# loading


def load_panel(
    source,
    schema: Mapping[str, str] | None = None,
    dose_onset: str = "auto",
) -> PanelDataset:
    """Read and validate a long-format CSV panel.

    Parameters
    ----------
    source : path, str, bytes or file-like
        CSV with a header row.
    schema : mapping, optional
        Column names for ``unit``, ``period``, ``dose``, ``outcome`` and
        optionally ``group`` (explicit first-treatment period; ``0`` or blank
        means never treated).
    dose_onset : {"auto", "exposure", "constant", "column"}
        How the first-treatment period is determined.  ``"exposure"``: first
        period with a positive recorded dose.  ``"constant"``: the recorded
        dose is time-invariant and treatment starts in period 2 (two-period
        data only).  ``"column"``: read from the ``group`` column.  ``"auto"``
        picks ``column`` when present, ``constant`` for two-period data with
        time-invariant doses, and ``exposure`` otherwise.
    """
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    if isinstance(source, bytes):
        source = io.BytesIO(source)
    frame = pd.read_csv(source, float_precision="round_trip")
    return panel_from_frame(frame, schema, dose_onset)


def panel_from_frame(frame: pd.DataFrame, schema: Mapping[str, str] | None = None,
                     dose_onset: str = "auto") -> PanelDataset:
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    required = ["unit", "period", "dose", "outcome"]
    missing = [schema[k] for k in required if schema[k] not in frame.columns]
    if missing:
        raise MissingColumn(f"missing columns: {missing}", columns=missing)
    group_col = schema.get("group", "group")
    has_group = group_col in frame.columns

    unit = frame[schema["unit"]].to_numpy()
    period = frame[schema["period"]].to_numpy()
    dose = pd.to_numeric(frame[schema["dose"]]).to_numpy(dtype=float)
    y = pd.to_numeric(frame[schema["outcome"]]).to_numpy(dtype=float)
    if np.any(dose < 0):
        raise NegativeDose("negative dose values", units=sorted(set(unit[dose < 0].tolist()))[:20])

    units, u_idx = np.unique(unit, return_inverse=True)
    periods, p_idx = np.unique(period, return_inverse=True)
    n, T = len(units), len(periods)
    counts = np.zeros((n, T), dtype=int)
    np.add.at(counts, (u_idx, p_idx), 1)
    if np.any(counts != 1):
        bad = units[np.any(counts != 1, axis=1)]
        raise UnbalancedPanel(
            f"{len(bad)} unit(s) do not have exactly one record per period", units=bad[:50].tolist()
        )
    Y = np.empty((n, T))
    Y[u_idx, p_idx] = y
    Dm = np.empty((n, T))
    Dm[u_idx, p_idx] = dose

    pos = Dm > 0
    # positive recorded doses must be identical within a unit and never switch off
    dmax = Dm.max(axis=1)
    changes = np.any(pos & (Dm != dmax[:, None]), axis=1)
    first_pos = np.where(pos.any(axis=1), pos.argmax(axis=1) + 1, T + 1)
    t = np.arange(1, T + 1)
    turns_off = np.any((t[None, :] >= first_pos[:, None]) & ~pos, axis=1)
    if np.any(changes | turns_off):
        bad = units[changes | turns_off]
        raise DoseChangesPostTreatment(
            "dose must stay constant once a unit is treated", units=bad[:50].tolist()
        )

    rule = dose_onset
    if rule == "auto":
        if has_group:
            rule = "column"
        elif T == 2 and np.all(Dm[:, 0] == Dm[:, 1]):
            rule = "constant"
        else:
            rule = "exposure"
    if rule == "column":
        if not has_group:
            raise MissingColumn(f"missing columns: ['{group_col}']", columns=[group_col])
        g = pd.to_numeric(frame[group_col]).fillna(0).to_numpy()
        Gm = np.empty((n, T))
        Gm[u_idx, p_idx] = g
        if np.any(Gm != Gm[:, :1]):
            raise InvalidSpec("group column varies within unit")
        G_raw = Gm[:, 0]
        # column holds period labels; 0 or anything past the last label is never-treated
        never = (G_raw == 0) | (G_raw > periods.max())
        known = np.isin(G_raw, periods)
        if np.any(~never & ~known):
            raise InvalidSpec("group column holds values that are not period labels")
        G = np.where(never, T + 1, np.searchsorted(periods, G_raw) + 1).astype(np.int64)
    elif rule == "constant":
        if T != 2 or np.any(Dm[:, 0] != Dm[:, 1]):
            raise InvalidSpec("'constant' dose onset requires two-period data with time-invariant doses")
        G = np.where(dmax > 0, 2, 3).astype(np.int64)
    elif rule == "exposure":
        G = first_pos.astype(np.int64)
    else:
        raise InvalidSpec(f"unknown dose_onset rule {dose_onset!r}")
    if np.any(G == 1):
        raise TreatedInFirstPeriod(
            "units treated in the first period are excluded", units=units[G == 1][:50].tolist()
        )
    return PanelDataset(units, periods, dmax, Y, G)


# --------------------------------------------------------------------------
# timing


@dataclass(frozen=True, eq=False)
class TimingIndex:
    """Timing groups, per-period exposure and group shares."""

    group: np.ndarray
    exposure: np.ndarray
    groups: tuple[int, ...]
    group_shares: dict[int, float]
    gbar: dict[int, float]
    dose_by_group: dict[int, np.ndarray]
    n_periods: int

    @property
    def never_treated(self) -> int:
        return self.n_periods + 1

    @property
    def treated_groups(self) -> tuple[int, ...]:
        return tuple(g for g in self.groups if g <= self.n_periods)

    def members(self, g: int) -> np.ndarray:
        return self.group == g


def derive_timing(data: PanelDataset, dose_onset: Sequence[int] | None = None) -> TimingIndex:
    """Timing groups ``G``, exposure ``W_it = D_i 1{t >= G_i}``, shares and ``gbar``.

    ``dose_onset`` optionally overrides the dataset's first-treatment periods.
    """
    T = data.n_periods
    if dose_onset is not None:
        G = np.asarray(dose_onset, dtype=np.int64)
        _validate_groups(G, data.dose, T)
    else:
        G = data.first_treated
    t = np.arange(1, T + 1)
    W = np.where(t[None, :] >= G[:, None], data.dose[:, None], 0.0)
    groups, counts = np.unique(G, return_counts=True)
    n = len(G)
    shares = {int(g): c / n for g, c in zip(groups, counts)}
    gbar = {int(g): (T - g + 1) / T if g <= T else 0.0 for g in groups}
    by_group = {int(g): data.dose[G == g] for g in groups}
    return TimingIndex(G, W, tuple(int(g) for g in groups), shares, gbar, by_group, T)


# --------------------------------------------------------------------------
# dose grid


@dataclass(frozen=True)
class DoseGrid:
    points: np.ndarray
    kind: str  # "discrete" | "continuous"
    d_L: float
    d_U: float
    has_untreated: bool

    @property
    def is_discrete(self) -> bool:
        return self.kind == "discrete"


def dose_grid(
    data: PanelDataset | np.ndarray,
    threshold: int = DISCRETE_THRESHOLD,
    rounding: float | None = None,
) -> DoseGrid:
    """Distinct positive doses and their discrete/continuous classification.

    Ties are merged on exact equality; pass ``rounding`` to snap doses to a
    grid first.
    """
    dose = data.dose if isinstance(data, PanelDataset) else np.asarray(data, dtype=float)
    if rounding:
        dose = np.round(dose / rounding) * rounding
    pos = np.unique(dose[dose > 0])
    if pos.size == 0:
        raise NoPositiveDose("no positive doses")
    kind = "discrete" if pos.size <= threshold else "continuous"
    return DoseGrid(pos, kind, float(pos[0]), float(pos[-1]), bool(np.any(dose == 0)))


# --------------------------------------------------------------------------
# cell means


@dataclass(frozen=True)
class Level:
    t: int

    def __call__(self, Y: np.ndarray) -> np.ndarray:
        return Y[:, self.t - 1]


@dataclass(frozen=True)
class LongDiff:
    """``Y_t - Y_base``."""

    t: int
    base: int

    def __call__(self, Y: np.ndarray) -> np.ndarray:
        return Y[:, self.t - 1] - Y[:, self.base - 1]


@dataclass(frozen=True)
class WindowAvg:
    """Average outcome over periods ``t1..t2`` inclusive."""

    t1: int
    t2: int

    def __call__(self, Y: np.ndarray) -> np.ndarray:
        if self.t2 < self.t1:
            raise EmptyCell(f"empty window ({self.t1}, {self.t2})")
        return Y[:, self.t1 - 1 : self.t2].mean(axis=1)


@dataclass(frozen=True)
class WindowDiff:
    """Difference of two window averages, ``post - pre``."""

    post: tuple[int, int]
    pre: tuple[int, int]

    def __call__(self, Y: np.ndarray) -> np.ndarray:
        return WindowAvg(*self.post)(Y) - WindowAvg(*self.pre)(Y)


@dataclass(frozen=True)
class Selector:
    """Unit selector over timing group, dose set and an optional mask."""

    groups: frozenset | None = None
    doses: frozenset | None = None
    dose_range: tuple[float, float] | None = None
    mask: np.ndarray | None = field(default=None, compare=False)

    def __call__(self, data: PanelDataset) -> np.ndarray:
        keep = np.ones(data.n_units, dtype=bool)
        if self.groups is not None:
            keep &= np.isin(data.first_treated, list(self.groups))
        if self.doses is not None:
            keep &= np.isin(data.dose, list(self.doses))
        if self.dose_range is not None:
            lo, hi = self.dose_range
            keep &= (data.dose >= lo) & (data.dose <= hi)
        if self.mask is not None:
            keep &= self.mask
        return keep


def select(groups: Iterable[int] | int | None = None, doses: Iterable[float] | float | None = None,
           **kw) -> Selector:
    if groups is not None and np.isscalar(groups):
        groups = [groups]
    if doses is not None and np.isscalar(doses):
        doses = [doses]
    return Selector(
        frozenset(int(g) for g in groups) if groups is not None else None,
        frozenset(float(d) for d in doses) if doses is not None else None,
        **kw,
    )


def cell_mean(data: PanelDataset, selector: Selector, transform) -> float:
    """Mean of ``transform(Y)`` over the units matched by ``selector``.

    Raises
    ------
    EmptyCell
        If no unit matches.
    """
    keep = selector(data)
    if not keep.any():
        raise EmptyCell("selector matches no units", selector=repr(selector))
    return float(transform(data.outcome[keep]).mean())
