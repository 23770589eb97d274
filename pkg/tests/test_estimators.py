import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from mbranging.combine import RangeGrid
from mbranging.estimators import BackprojectionRanger, OmpRanger, SpbpRanger
from mbranging.exceptions import InvalidArgumentError
from mbranging.metrics import ospa
from mbranging.scene import Isotropic, ScatteringCenter, Scene
from mbranging.subband import (
    OfdmParams,
    gpp_fr3_allocations,
    make_contiguous_sweep,
    plan_from_allocations,
)
from mbranging.synth import CALIBRATED, ideal_cfr

MHz = 1e6


def sweep(scene, plan):
    out = []
    for k in range(plan.K):
        c = ideal_cfr(scene, plan, k)
        out.append(c.advance(c.samples, "measured").advance(c.samples, CALIBRATED))
    return out


def two_targets():
    return Scene(
        (ScatteringCenter(1.2, Isotropic(1.0, 0.3)), ScatteringCenter(1.4, Isotropic(1.0, 2.1))),
        amplitude_frequency=10e9,
    )


def plan_of(labels):
    return plan_from_allocations(gpp_fr3_allocations(), labels, None, OfdmParams(12.5 * MHz))


@pytest.mark.parametrize("cls", [BackprojectionRanger, SpbpRanger, OmpRanger])
def test_params_round_trip_through_clone(cls):
    est = cls(threshold_db=12.0)
    twin = clone(est)
    assert twin.get_params() == est.get_params()
    assert twin.get_params()["threshold_db"] == 12.0
    twin.set_params(exclusion=0.5)
    assert twin.exclusion == 0.5 and est.exclusion == 0.3


def test_bp_resolves_contiguous_pair():
    X = sweep(two_targets(), plan_of(["S1", "S2"]))
    est = BackprojectionRanger().fit(X)
    assert est.n_subbands_ == 2
    found = est.predict(X)
    assert len(found) == 2
    assert ospa(found, [1.2, 1.4], 0.2) < 0.005


def test_transform_shape_and_snapshot_average():
    plan = plan_of(["S1", "S2"])
    one = sweep(two_targets(), plan)
    est = BackprojectionRanger(grid=(1.0, 1.6, 1e-3)).fit(one)
    values = est.transform([one, one, one])
    assert values.shape == (3, RangeGrid(1.0, 1.6, 1e-3).size)
    np.testing.assert_allclose(est.combined_profile([one, one]).values, values[0])
    # fit_transform from TransformerMixin
    np.testing.assert_allclose(est.fit_transform(one), values[:1])


def test_spbp_fit_sets_subsets_and_returns_magnitudes():
    X = sweep(two_targets(), plan_of(["S1", "S2", "S3"]))
    est = SpbpRanger(seed=0).fit(X)
    assert set(est.k0_) | set(est.k1_) <= {0, 1, 2}
    values = est.transform(X)
    assert values.dtype.kind == "f" and np.all(values >= 0)
    assert est.combined_profile(X).kind == "spbp"


def test_spbp_needs_three_subbands():
    X = sweep(two_targets(), plan_of(["S1", "S2"]))
    with pytest.raises(InvalidArgumentError):
        SpbpRanger().fit(X)


def test_omp_recovers_on_grid_targets():
    plan = make_contiguous_sweep(7e9, 0.5e9, 4, OfdmParams(12.5 * MHz))
    est = OmpRanger(residual_threshold=1e-12)
    X = sweep(Scene((ScatteringCenter(1.0, Isotropic(1.0, 0.0)),), amplitude_frequency=10e9), plan)
    est.fit(X)
    step = est.grid_.step
    r = est.grid_.ranges[est.grid_.index(1.5)]
    X = sweep(Scene((ScatteringCenter(r, Isotropic(1.0, 0.0)),), amplitude_frequency=10e9), plan)
    found = est.predict(X)
    np.testing.assert_allclose(found.ranges, [r], atol=step / 2)
    res = est.solve(X)
    assert res.residual_fraction < 1e-10


@pytest.mark.parametrize("cls", [BackprojectionRanger, OmpRanger])
def test_not_fitted(cls):
    X = sweep(two_targets(), plan_of(["S1", "S2"]))
    with pytest.raises(NotFittedError):
        cls().transform(X)


def test_rejects_other_subbands_after_fit():
    est = BackprojectionRanger().fit(sweep(two_targets(), plan_of(["S1", "S2"])))
    with pytest.raises(InvalidArgumentError):
        est.transform(sweep(two_targets(), plan_of(["S2", "S3"])))


def test_rejects_uncalibrated_input():
    plan = plan_of(["S1", "S2"])
    raw = [ideal_cfr(two_targets(), plan, k) for k in range(plan.K)]
    with pytest.raises(InvalidArgumentError):
        BackprojectionRanger().fit(raw)


def test_rejects_bad_grid_and_empty_input():
    X = sweep(two_targets(), plan_of(["S1", "S2"]))
    with pytest.raises(InvalidArgumentError):
        BackprojectionRanger(grid="wide").fit(X)
    with pytest.raises(InvalidArgumentError):
        BackprojectionRanger().fit([])
