import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mbranging.combine import (
    OmpConfig,
    RangeGrid,
    RangeProfile,
    SpbpConfig,
    bp_combine,
    dirichlet,
    find_lobes,
    omp,
    omp_combine,
    omp_dictionary,
    pslr,
    raf,
    range_profile,
    spbp_candidates,
    spbp_profile,
    spbp_search_k1,
    spbp_select_k0,
)
from mbranging.exceptions import (
    InvalidArgumentError,
    NoCandidateError,
    UndefinedPSLRError,
)
from mbranging.preproc import cfr_to_cir
from mbranging.scene import Isotropic, RandomPhase, ScatteringCenter, Scene, scene_coefficients
from mbranging.subband import (
    GHz,
    MHz,
    OfdmParams,
    Subband,
    SubbandPlan,
    gpp_fr3_allocations,
    make_contiguous_sweep,
    nominal_resolution,
    plan_from_allocations,
    total_aperture,
)
from mbranging.synth import CALIBRATED, ideal_cfr

C = 299792458.0
GRID = RangeGrid(0.5, 3.0, 5e-4)


def calibrated(scene, plan):
    out = []
    for k in range(plan.K):
        c = ideal_cfr(scene, plan, k)
        out.append(c.advance(c.samples, "measured").advance(c.samples, CALIBRATED))
    return out


def profiles(scene, plan, grid=GRID):
    return [range_profile(cfr_to_cir(c), grid) for c in calibrated(scene, plan)]


def iso(*pairs, f=10e9):
    return Scene(tuple(ScatteringCenter(r, Isotropic(1.0, p)) for r, p in pairs), amplitude_frequency=f)


# ---------------------------------------------------------------- grids/profiles

def test_range_grid():
    g = RangeGrid(0.0, 1.0, 0.25)
    np.testing.assert_allclose(g.ranges, [0, 0.25, 0.5, 0.75, 1.0])
    assert g.index(0.6) == 2
    with pytest.raises(InvalidArgumentError):
        RangeGrid(1.0, 0.5, 0.1)
    with pytest.raises(InvalidArgumentError):
        RangeGrid(0.0, 1.0, 0.0)
    s = RangeGrid.symmetric(1.0, 0.5)
    np.testing.assert_allclose(s.ranges, [-1, -0.5, 0, 0.5, 1])


def test_profile_phase_equals_scattering_phase():
    plan = make_contiguous_sweep(7 * GHz, 0.5 * GHz, 3)
    grid = RangeGrid(1.0, 2.0, 1e-4)
    for p in profiles(iso((1.37, 0.9)), plan, grid):
        eta = p.at(1.37)
        assert np.angle(eta) == pytest.approx(0.9, abs=0.02)


def test_profile_modulus_matches_cir():
    plan = make_contiguous_sweep(7 * GHz, 0.5 * GHz, 1)
    cfr = calibrated(iso((1.3, 0.0)), plan)[0]
    cir = cfr_to_cir(cfr)
    p = range_profile(cir, GRID)
    np.testing.assert_allclose(np.abs(p.values), np.abs(cir.at(2 * GRID.ranges / C)), rtol=1e-14)


def test_isotropic_phases_agree_random_do_not():
    plan = make_contiguous_sweep(7 * GHz, 0.5 * GHz, 4)
    grid = RangeGrid(1.0, 2.0, 1e-4)
    ph = [np.angle(p.at(1.5)) for p in profiles(iso((1.5, 0.4)), plan, grid)]
    assert np.ptp(ph) < 0.05
    rnd = Scene((ScatteringCenter(1.5, RandomPhase(1.0, 5, 1.0)),), amplitude_frequency=1e10)
    ph = [np.angle(p.at(1.5)) for p in profiles(rnd, plan, grid)]
    assert np.ptp(ph) > 0.5


def test_grid_beyond_cir_span_rejected():
    plan = make_contiguous_sweep(7 * GHz, 0.5 * GHz, 1)
    cir = cfr_to_cir(calibrated(iso((1.0, 0)), plan)[0])
    with pytest.raises(InvalidArgumentError):
        range_profile(cir, RangeGrid(0.0, 20.0, 0.01))


# ---------------------------------------------------------------- BP

def test_bp_identities():
    plan = make_contiguous_sweep(7 * GHz, 0.5 * GHz, 3)
    ps = profiles(iso((1.2, 0.0)), plan)
    np.testing.assert_array_equal(bp_combine(ps[:1]).values, ps[0].values)
    np.testing.assert_allclose(bp_combine([ps[1]] * 3).values, ps[1].values, rtol=1e-15)
    other = RangeProfile(RangeGrid(0.5, 3.0, 1e-3), np.zeros(2501), "bp")
    with pytest.raises(InvalidArgumentError):
        bp_combine([ps[0], other])
    with pytest.raises(InvalidArgumentError):
        bp_combine([])


def _hp_width(profile):
    p = profile.magnitude**2
    i = int(np.argmax(p))
    lo, hi = i, i
    while p[lo - 1] >= p[i] / 2:
        lo -= 1
    while p[hi + 1] >= p[i] / 2:
        hi += 1
    return (hi - lo + 1) * profile.grid.step


def test_bp_width_shrinks_with_k():
    single = make_contiguous_sweep(8 * GHz, 0.5 * GHz, 1)
    multi = make_contiguous_sweep(8 * GHz, 0.5 * GHz, 6)
    grid = RangeGrid(0.8, 1.8, 1e-4)
    w1 = _hp_width(bp_combine(profiles(iso((1.3, 0)), single, grid)))
    w6 = _hp_width(bp_combine(profiles(iso((1.3, 0)), multi, grid)))
    assert w1 / w6 == pytest.approx(6, rel=0.1)


@given(st.integers(0, 10_000))
def test_bp_triangle_inequality(seed):
    rng = np.random.default_rng(seed)
    grid = RangeGrid(0, 1, 0.1)
    vals = rng.standard_normal((4, grid.size)) + 1j * rng.standard_normal((4, grid.size))
    ps = [RangeProfile(grid, v, "subband", k) for k, v in enumerate(vals)]
    out = np.abs(bp_combine(ps).values)
    assert np.all(out <= np.mean(np.abs(vals), axis=0) + 1e-12)
    same_phase = np.abs(vals) * np.exp(1j * 0.3)
    ps = [RangeProfile(grid, v, "subband", k) for k, v in enumerate(same_phase)]
    np.testing.assert_allclose(np.abs(bp_combine(ps).values), np.mean(np.abs(vals), axis=0))


@given(st.floats(1e-3, 1e3))
def test_bp_argmax_invariant_to_scaling(scale):
    plan = make_contiguous_sweep(7 * GHz, 0.5 * GHz, 3)
    cfrs = calibrated(iso((1.4, 0.2)), plan)
    scaled = [c.advance(c.samples * scale, CALIBRATED) for c in cfrs]
    a = bp_combine([range_profile(cfr_to_cir(c), GRID) for c in cfrs])
    b = bp_combine([range_profile(cfr_to_cir(c), GRID) for c in scaled])
    assert np.argmax(a.magnitude) == np.argmax(b.magnitude)


# ---------------------------------------------------------------- RAF / Dirichlet

def test_raf_unit_at_zero_and_conjugate_symmetric():
    plan = plan_from_allocations(gpp_fr3_allocations(), ["S1", "S3", "S5"])
    grid = RangeGrid.symmetric(0.5, 1e-3)
    psi = raf(plan, grid)
    assert psi.at(0.0) == pytest.approx(1.0)
    np.testing.assert_allclose(psi.values[::-1], np.conj(psi.values), atol=1e-13)


def test_raf_matches_direct_sum():
    plan = make_contiguous_sweep(9 * GHz, 0.4 * GHz, 3, OfdmParams(10 * MHz))
    r = np.linspace(-0.3, 0.3, 101)
    psi = raf(plan, RangeGrid(-0.3, 0.3, 0.006))
    direct = np.mean([np.sinc(2 * 0.4e9 * r / C) * np.exp(4j * np.pi * f * r / C)
                      for f in plan.carriers], axis=0)
    np.testing.assert_allclose(psi.values, direct, atol=1e-12)


def test_contiguous_grating_on_sinc_nulls():
    bw = 0.5 * GHz
    plan = make_contiguous_sweep(8 * GHz, bw, 5)
    grid = RangeGrid.symmetric(0.4, C / (2 * bw) / 100)
    psi = raf(plan, grid)
    assert abs(psi.at(C / (2 * bw))) <= 0.01
    assert abs(psi.at(-C / (2 * bw))) <= 0.01


def test_dirichlet_identities():
    K, d, f0 = 5, 0.6e9, 7e9
    assert dirichlet(0.0, K, d, f0) == pytest.approx(K)
    period = C / (2 * d)
    r = np.linspace(-0.2, 0.2, 41) + 0.0123
    np.testing.assert_allclose(np.abs(dirichlet(r + period, K, d, f0)), np.abs(dirichlet(r, K, d, f0)),
                               atol=1e-9)
    assert abs(dirichlet(C / (2 * K * d), K, d, f0)) < 1e-9
    direct = sum(np.exp(4j * np.pi * (f0 + k * d) * r / C) for k in range(K))
    np.testing.assert_allclose(dirichlet(r, K, d, f0), direct, atol=1e-9)
    assert abs(dirichlet(period, K, d)) == pytest.approx(K)
    with pytest.raises(InvalidArgumentError):
        dirichlet(0.0, K, 0.0)


# ---------------------------------------------------------------- PSLR / lobes

def test_pslr_single_subband_sinc():
    plan = SubbandPlan((Subband(10 * GHz, 0.5 * GHz),))
    grid = RangeGrid.symmetric(1.0, 1e-4)
    psi = raf(plan, grid)
    assert pslr(psi, C / (2 * 0.5e9), 1.0) == pytest.approx(13.26, abs=0.01)


def test_pslr_equal_peaks_and_empty():
    grid = RangeGrid(-1, 1, 0.01)
    v = np.zeros(grid.size)
    v[grid.index(-0.5)] = v[grid.index(0.5)] = 1.0
    prof = RangeProfile(grid, v, "raf")
    assert pslr(prof, 0.2, 1.0) == pytest.approx(0.0)
    with pytest.raises(UndefinedPSLRError):
        pslr(prof, 5.0, 1.0)


def test_all_five_grating_lobes_about_six_db():
    plan = plan_from_allocations(gpp_fr3_allocations(), ["S1", "S2", "S3", "S4", "S5"])
    psi = raf(plan, RangeGrid.symmetric(0.5, 1e-4))
    level = find_lobes(psi, 0.5)[0][1]
    assert level == pytest.approx(-6.0, abs=1.5)
    mainlobe = SpbpConfig().resolved_mainlobe(plan)
    assert pslr(psi, mainlobe, 0.5) == pytest.approx(-level, abs=1e-9)


def test_s2_s3_grating_spacing_from_carrier_separation():
    # Strongest lobe sits near c / (2 * carrier separation), pulled in by the sinc envelope.
    ofdm = OfdmParams(12.5 * MHz)
    plan = plan_from_allocations(gpp_fr3_allocations(), ["S2", "S3"], None, ofdm)
    lobe = abs(find_lobes(raf(plan, RangeGrid.symmetric(0.5, 1e-4)), 0.5)[0][0])
    expected = C / (2 * np.diff(plan.carriers)[0])
    assert lobe == pytest.approx(expected, rel=0.15)
    assert lobe == pytest.approx(0.0407, abs=5e-4)


# ---------------------------------------------------------------- SPBP

def test_select_k0():
    assert spbp_select_k0(3, 0) == (0, 2)
    for seed in range(10):
        k0 = spbp_select_k0(5, seed)
        assert 0 in k0 and 4 in k0 and len(k0) == 4
        assert spbp_select_k0(5, seed) == k0
    with pytest.raises(InvalidArgumentError):
        spbp_select_k0(2)


def _oracle_k1(plan, k0, cfg):
    """Independent exhaustive search over bitmasks."""
    K = plan.K
    aperture = max(s.high for s in plan.subbands) - min(s.low for s in plan.subbands)
    res = C / (2 * aperture)
    mainlobe = cfg.mainlobe if cfg.mainlobe else 1.2 * res
    step = min(1e-3, mainlobe / 4)
    n = int(np.floor(cfg.r_max / step + 1e-9))
    r = step * np.arange(-n, n + 1)

    def psi(idx):
        acc = np.zeros(r.size, complex)
        for k in idx:
            s = plan.subbands[k]
            acc += np.sinc(2 * s.bandwidth * r / C) * np.exp(4j * np.pi * s.carrier * r / C)
        return acc / len(idx)

    g0 = np.abs(psi(k0))
    best, best_key = None, None
    for mask in range(1, 2**K):
        idx = tuple(k for k in range(K) if mask >> k & 1)
        if len(idx) < cfg.min_cardinality or len(idx) == K or idx == tuple(sorted(k0)):
            continue
        lo = min(plan.subbands[k].low for k in idx)
        hi = max(plan.subbands[k].high for k in idx)
        if (hi - lo) / aperture + 1e-12 < cfg.min_coverage:
            continue
        gamma = g0 * np.abs(psi(idx))
        val = 20 * np.log10(gamma[n] / gamma[np.abs(r) > mainlobe].max())
        key = (len(idx), idx)
        if best is None or val > best + 1e-9 or (abs(val - best) <= 1e-9 and key < best_key):
            best, best_key = val, key
    return best_key[1]


def _random_plan(rng, K):
    bw = rng.choice([0.25, 0.5, 1.0], size=K) * GHz
    gaps = rng.choice([0.0, 0.0, 0.5, 1.0, 1.5], size=K) * GHz
    f, bands = 7 * GHz, []
    for b, g in zip(bw, gaps):
        f += g
        bands.append(Subband(f + b / 2, b))
        f += b
    return SubbandPlan(tuple(bands), OfdmParams(12.5 * MHz))


def test_search_matches_oracle_k4_by_hand_count():
    plan = make_contiguous_sweep(7 * GHz, 0.5 * GHz, 4)
    k0 = spbp_select_k0(4, 1)
    cfg = SpbpConfig(min_coverage=0.0)
    # subsets of {0..3} with >= 2 members: 11; minus the full set and K0 -> 9
    assert len(spbp_candidates(plan, k0, cfg)) == 9
    assert spbp_search_k1(plan, k0, cfg) == _oracle_k1(plan, k0, cfg)


@pytest.mark.parametrize("seed", range(8))
def test_search_matches_oracle_random(seed):
    rng = np.random.default_rng(seed)
    K = int(rng.integers(3, 7))
    plan = _random_plan(rng, K)
    k0 = spbp_select_k0(K, seed)
    cfg = SpbpConfig(r_max=0.6)
    assert spbp_search_k1(plan, k0, cfg) == _oracle_k1(plan, k0, cfg)


def test_search_threads_do_not_change_result():
    plan = plan_from_allocations(gpp_fr3_allocations(), ["S1", "S2", "S3"], None, OfdmParams(12.5 * MHz))
    k0 = spbp_select_k0(plan.K, 0)
    a = spbp_search_k1(plan, k0, SpbpConfig(n_jobs=1, grid_step=1e-4))
    b = spbp_search_k1(plan, k0, SpbpConfig(n_jobs=4, grid_step=1e-4))
    assert a == b


def test_search_infeasible_and_limits():
    plan = make_contiguous_sweep(7 * GHz, 0.5 * GHz, 4)
    with pytest.raises(NoCandidateError):
        spbp_search_k1(plan, (0, 1, 3), SpbpConfig(min_cardinality=5))
    with pytest.raises(InvalidArgumentError):
        spbp_search_k1(make_contiguous_sweep(7 * GHz, 0.5 * GHz, 2), (0, 1))
    with pytest.raises(InvalidArgumentError):
        spbp_search_k1(make_contiguous_sweep(7 * GHz, 0.1 * GHz, 21), (0, 20))
    with pytest.raises(InvalidArgumentError):
        SpbpConfig(min_cardinality=1)


def test_spbp_profile_properties():
    plan = plan_from_allocations(gpp_fr3_allocations(), ["S1", "S2", "S3"], None, OfdmParams(12.5 * MHz))
    grid = RangeGrid(1.0, 1.6, 5e-4)
    ps = profiles(iso((1.3, 0.5)), plan, grid)
    out = spbp_profile(ps, (0, 2), (1, 2))
    assert out.kind == "spbp" and np.isrealobj(out.values)
    assert abs(out.ranges[np.argmax(out.values)] - 1.3) <= grid.step
    zero = [RangeProfile(grid, np.zeros(grid.size), "subband", k) for k in range(3)]
    assert not np.any(spbp_profile(zero[:2] + ps[2:], (0, 1), (1, 2)).values)


def test_spbp_squares_magnitude_ratio():
    grid = RangeGrid(0, 1, 0.5)
    strong, weak = 1.0, 0.1  # 20 dB
    vals = np.array([strong, 0.0, weak], complex)
    ps = [RangeProfile(grid, vals, "subband", k) for k in range(3)]
    out = spbp_profile(ps, (0, 2), (1, 2)).values
    assert 20 * np.log10(out[2] / out[0]) == pytest.approx(-40.0)


# ---------------------------------------------------------------- OMP

def _on_grid_scene(plan, idxs, phases):
    grid = OmpConfig().resolved_grid(plan)
    ranges = grid.ranges[list(idxs)]
    return iso(*zip(ranges, phases)), ranges


@pytest.mark.parametrize("idxs", [(40,), (40, 52), (10, 30, 55)])
def test_omp_exact_on_grid_recovery(idxs):
    plan = make_contiguous_sweep(7 * GHz, 0.5 * GHz, 4)
    scene, ranges = _on_grid_scene(plan, idxs, np.linspace(0.2, 2.0, len(idxs)))
    res = omp_combine(calibrated(scene, plan), plan, OmpConfig(residual_threshold=1e-12))
    assert res.residual_fraction < 1e-10
    np.testing.assert_allclose(res.ranges, np.sort(ranges), atol=1e-9)
    truth = scene_coefficients(scene, 0, plan.carriers[0])[np.argsort(ranges)]
    np.testing.assert_allclose(res.amplitudes, truth, rtol=0.01)


def test_omp_greedy_step_can_miss_close_targets():
    # Two targets two resolutions apart in quadrature: the weaker one's sidelobe
    # moves the first correlation peak one grid step off the stronger target and
    # the greedy path never recovers within ten atoms.
    plan = make_contiguous_sweep(7 * GHz, 0.5 * GHz, 4)
    scene, _ = _on_grid_scene(plan, (40, 48), (0.0, np.pi / 2))
    res = omp_combine(calibrated(scene, plan), plan, OmpConfig(residual_threshold=1e-12))
    assert res.residual_fraction > 1e-10
    # on a grid whose step equals the resolution the atoms are orthogonal
    grid = OmpConfig().resolved_grid(plan)
    coarse = RangeGrid(grid.ranges[40], grid.ranges[40] + 40 * grid.step, 4 * grid.step)
    res = omp_combine(calibrated(scene, plan), plan, OmpConfig(coarse, residual_threshold=1e-12))
    assert res.residual_fraction < 1e-10


def test_omp_random_phase_does_not_fit_in_two_atoms():
    plan = make_contiguous_sweep(7 * GHz, 0.5 * GHz, 6)
    grid = OmpConfig().resolved_grid(plan)
    r = grid.ranges[60]
    scene = Scene((ScatteringCenter(r, RandomPhase(1.0, 11, np.deg2rad(60))),), amplitude_frequency=1e10)
    res = omp_combine(calibrated(scene, plan), plan, OmpConfig(max_atoms=2))
    assert res.residual_history[-1] >= 1e-3


def test_omp_full_dictionary_projection(rng):
    f = 7e9 + np.arange(40) * 50e6
    grid = RangeGrid(0.5, 1.5, 0.05)
    atoms = omp_dictionary(f, grid)
    np.testing.assert_allclose(np.linalg.norm(atoms, axis=0), 1.0)
    y = rng.standard_normal(40) + 1j * rng.standard_normal(40)
    support, coef, _ = omp(y, atoms, grid.size, 0.0)
    resid = y - atoms[:, support] @ coef
    assert np.max(np.abs(atoms.conj().T @ resid)) < 1e-8


def test_omp_rejects_uncalibrated():
    plan = make_contiguous_sweep(7 * GHz, 0.5 * GHz, 2)
    cfrs = [ideal_cfr(iso((1.0, 0)), plan, k) for k in range(2)]
    with pytest.raises(InvalidArgumentError):
        omp_combine(cfrs, plan)
