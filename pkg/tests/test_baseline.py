import numpy as np
import pytest

from dose_did.baseline import SELECTION_BIAS_CAVEAT, acr, acr_star, att_dd, path_mean
from dose_did.errors import DegenerateDose, DoseOutOfSupport, EmptyCell, NotTwoPeriod, NoUntreatedUnits
from dose_did.panel import PanelDataset
from dose_did.simlab import DgpSpec, generate


@pytest.fixture(scope="module")
def noiseless():
    data, oracle = generate(DgpSpec("two-period-exp", n_units=400, seed=11, noise_sd=0.0))
    return data, oracle


def _linear_panel(theta=2.0, continuous=False, seed=0):
    rng = np.random.default_rng(seed)
    n = 600
    D = rng.uniform(0.5, 3, n) if continuous else rng.choice([0.5, 1.0, 2.0, 3.0], n)
    D[:100] = 0.0
    Y = np.zeros((n, 2))
    Y[:, 0] = rng.normal(size=n)
    Y[:, 1] = Y[:, 0] + 0.25 + theta * D
    return PanelDataset.from_arrays(D, Y)


def test_path_mean_noiseless(noiseless):
    data, _ = noiseless
    assert path_mean(data, 2.0).value == pytest.approx(1 / 3 + 3 * np.log(3), abs=1e-12)
    assert path_mean(data, 0.0).value == pytest.approx(1 / 3, abs=1e-12)
    with pytest.raises(EmptyCell):
        path_mean(data, 2.25)


def test_att_noiseless(noiseless):
    data, oracle = noiseless
    est = att_dd(data, 2.0)
    assert est.value == pytest.approx(3 * np.log(3), abs=1e-12)  # 3.2958
    assert est.estimand == "ATT_dd" and est.comparison == "Untreated"
    assert att_dd(data, 2.0, assume="strong-pt").estimand == "ATE_d"
    for d in np.unique(data.dose[data.dose > 0]):
        assert att_dd(data, d).value == pytest.approx(oracle.att_dd(d), abs=1e-12)


def test_att_zero_when_paths_identical():
    Y = np.array([[0.0, 1.0], [0.0, 1.0], [2.0, 3.0]])
    assert att_dd(PanelDataset.from_arrays([0, 1, 1], Y), 1.0).value == 0.0


def test_att_needs_untreated():
    with pytest.raises(NoUntreatedUnits):
        att_dd(PanelDataset.from_arrays([1, 2], np.zeros((2, 2))), 1.0)


def test_not_two_period():
    with pytest.raises(NotTwoPeriod):
        att_dd(PanelDataset.from_arrays([0, 1], np.zeros((2, 3)), [4, 2]), 1.0)


def test_slope_noiseless_finite_difference(noiseless):
    data, _ = noiseless
    est = acr(data, 2.0)
    expected = (3 * np.log(3) - 2.5 * np.log(2.5)) / 0.5  # 2.0102
    assert est.value == pytest.approx(expected, abs=1e-12)
    assert est.estimand == "SlopeOfPath" and est.caveat == SELECTION_BIAS_CAVEAT
    strong = acr(data, 2.0, assume="strong-pt")
    assert strong.estimand == "ACR_d" and strong.caveat is None


@pytest.mark.parametrize("continuous", [False, True])
def test_slope_constant_effect(continuous):
    data = _linear_panel(continuous=continuous)
    for d in (1.0, 2.0):
        assert acr(data, d).value == pytest.approx(2.0, abs=1e-9)
    assert acr_star(data).value == pytest.approx(2.0, abs=1e-9)


def test_slope_out_of_support():
    data = _linear_panel(continuous=True)
    with pytest.raises(DoseOutOfSupport):
        acr(data, 0.1)


def test_average_slope_by_enumeration(noiseless):
    data, _ = noiseless
    m = lambda d: (1 + d) * np.log1p(d)
    doses = np.unique(data.dose[data.dose > 0])
    prev = np.concatenate([[0.0], doses[:-1]])
    slopes = dict(zip(doses, (m(doses) - m(prev)) / (doses - prev)))
    pos = data.dose[data.dose > 0]
    expected = np.mean([slopes[d] for d in pos])
    est = acr_star(data)
    assert est.value == pytest.approx(expected, abs=1e-12)
    assert est.estimand == "SlopeOfPath_star"


def test_average_slope_degenerate():
    with pytest.raises(DegenerateDose):
        acr_star(PanelDataset.from_arrays([1, 1, 1], np.zeros((3, 2))))
    Y = np.array([[0.0, 0.0], [0.0, 3.0]])
    est = acr_star(PanelDataset.from_arrays([0, 1.5], Y))
    assert est.value == pytest.approx(2.0) and "DegenerateDose" in est.flags


def test_average_slope_without_untreated_drops_first_slope():
    D = np.array([1.0, 2.0, 3.0, 1.0, 2.0, 3.0])
    Y = np.column_stack([np.zeros(6), 5 + 2 * D])
    est = acr_star(PanelDataset.from_arrays(D, Y))
    assert est.value == pytest.approx(2.0) and "FirstSlopeUnidentified" in est.flags
