import numpy as np
import pytest

from dose_did.baseline import att_dd
from dose_did.errors import AllReplicatesFailed, EmptyCell, InvalidSpec
from dose_did.inference import BootstrapSpec, FragileStatistic, bootstrap
from dose_did.panel import PanelDataset
from dose_did.simlab import DgpSpec, generate


def _mean_dy(p):
    return float(p.delta_y.mean())


def test_se_matches_classical_formula():
    data, _ = generate(DgpSpec("two-period-exp", n_units=1000, seed=1))
    res = bootstrap(data, _mean_dy, BootstrapSpec(999, seed=1))
    classical = data.delta_y.std(ddof=1) / np.sqrt(1000)
    assert res.se == pytest.approx(classical, rel=0.15)
    assert res.ci_lower < res.estimate < res.ci_upper


def test_noiseless_containment():
    data, _ = generate(DgpSpec("two-period-exp", seed=2, noise_sd=0.0))
    res = bootstrap(data, lambda p: att_dd(p, 1.0), BootstrapSpec(199, seed=3))
    assert res.se >= 0
    assert res.ci_lower <= res.estimate <= res.ci_upper


def test_all_fail():
    data, _ = generate(DgpSpec("two-period-exp", seed=2))

    def bad(p):
        raise EmptyCell("always")

    with pytest.raises(AllReplicatesFailed):
        bootstrap(data, bad, BootstrapSpec(20, seed=0))


def test_deterministic_regardless_of_threads():
    data, _ = generate(DgpSpec("two-period-exp", seed=4))
    a = bootstrap(data, _mean_dy, BootstrapSpec(200, seed=9), threads=1)
    b = bootstrap(data, _mean_dy, BootstrapSpec(200, seed=9), threads=4)
    np.testing.assert_array_equal(a.replicates, b.replicates)
    se, lo, hi, reps = a
    assert se == a.se and reps is a.replicates


def test_fragile_warning():
    # a rare dose: the cell is often empty in resamples
    D = np.array([0.0] * 30 + [1.0] * 30 + [5.0])
    rng = np.random.default_rng(0)
    data = PanelDataset.from_arrays(D, rng.normal(size=(61, 2)))
    with pytest.warns(FragileStatistic):
        res = bootstrap(data, lambda p: att_dd(p, 5.0), BootstrapSpec(100, seed=1))
    assert res.n_failed > 10 and res.warnings


def test_spec_validation():
    with pytest.raises(InvalidSpec):
        BootstrapSpec(0)
    with pytest.raises(InvalidSpec):
        BootstrapSpec(10, ci_level=1.0)
