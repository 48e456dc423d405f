import numpy as np
import pytest

from dose_did import simlab
from dose_did.errors import InvalidSpec, NoAnalyticOracle
from dose_did.simlab import DgpSpec, generate


def test_noiseless_exponential_formula():
    data, oracle = generate(DgpSpec("TwoPeriodExponential", seed=2, noise_sd=0.0))
    D = data.dose
    treated = D > 0
    np.testing.assert_allclose(data.delta_y[treated], 1 / 3 + (1 + D[treated]) * np.log1p(D[treated]), atol=1e-12)
    np.testing.assert_allclose(data.delta_y[~treated], 1 / 3, atol=1e-12)
    assert oracle.att_dd(0.0) == 0.0


def test_exponential_dose_law():
    data, _ = generate(DgpSpec("two-period-exp", n_units=4000, seed=5))
    D = data.dose
    assert np.mean(D == 0) == pytest.approx(0.25, abs=1e-3)
    pos = D[D > 0]
    assert pos.min() >= 0.5 and np.all(np.mod(pos * 2, 1) == 0)
    small, _ = generate(DgpSpec("two-period-exp", n_units=4000, seed=5, params={"dose_scale": 0.5}))
    assert small.dose[small.dose > 0].min() == 0.5


def test_oracle_coherence():
    _, oracle = generate(DgpSpec("two-period-exp"))
    h = 1e-4
    for d in (0.5, 1.0, 2.5, 7.0):
        deriv = (oracle.att_dd(d + h) - oracle.att_dd(d - h)) / (2 * h)
        assert deriv == pytest.approx(oracle.acrt_dd(d) + oracle.selection_bias_slope(d), abs=1e-6)
        assert oracle.acrt_dd(d) == 1.0
        assert oracle.selection_bias_slope(d) == pytest.approx(np.log1p(d))


def test_custom_alternative_effect():
    data, oracle = generate(DgpSpec("Custom", seed=1, noise_sd=0.0))
    D = data.dose
    pos = D > 0
    np.testing.assert_allclose(data.delta_y[pos], 1 / 3 + D[pos] * np.log(D[pos]), atol=1e-12)
    assert oracle.selection_bias_slope(2.0) == pytest.approx(np.log(2.0))


def test_four_group_jump():
    data, oracle = generate(DgpSpec("FourGroupStaggered", seed=0, params={"unit_fe": False}))
    sel = (data.first_treated == 3) & (data.dose == 4.0)
    jump = data.outcome[sel, 2] - data.outcome[sel, 1]
    np.testing.assert_allclose(jump, 8.0 + 1 / 3, atol=1e-12)  # effect plus common trend step
    assert oracle.ate_gtd(3, 4, 4.0) == pytest.approx(8.0)


def test_reproducible_bitwise():
    for fam in simlab.FAMILIES:
        a, _ = generate(DgpSpec(fam, seed=42, noise_sd=1.0))
        b, _ = generate(DgpSpec(fam, seed=42, noise_sd=1.0))
        assert a.equals(b)
        c, _ = generate(DgpSpec(fam, seed=43, noise_sd=1.0))
        assert not np.array_equal(a.outcome, c.outcome)


def test_invalid_specs():
    with pytest.raises(InvalidSpec):
        DgpSpec("two-period-exp", n_units=1)
    with pytest.raises(InvalidSpec):
        DgpSpec("nope")
    with pytest.raises(InvalidSpec):
        DgpSpec("ramp", noise_sd=-1.0)


def test_twfe_oracle_values():
    assert simlab.oracle_twfe_target(DgpSpec("ConstantACR", params={"theta": 2.0})) == 2.0
    with pytest.raises(NoAnalyticOracle):
        simlab.oracle_twfe_target(DgpSpec("RampDynamics"))
    finite = simlab.oracle_twfe_target(DgpSpec("two-period-exp"), n_draws=200_000)
    population = simlab.oracle_twfe_target(DgpSpec("two-period-exp"), n_draws=200_000, finite_sample=False)
    # well above the true unit-level slope of 1, and shrinking toward the population value
    assert 2.5 < finite < population < 2.9


def test_paired_designs_share_pre_period_law():
    a, b = simlab.paired_pt_dgps(0, shared_draws=True)
    np.testing.assert_array_equal(a.dose, b.dose)
    T = a.n_periods
    np.testing.assert_array_equal(a.outcome[:, : T - 1], b.outcome[:, : T - 1])
    assert not np.array_equal(a.outcome[:, -1], b.outcome[:, -1])
    with pytest.raises(InvalidSpec):
        simlab.paired_pt_dgps(0, T=2)
