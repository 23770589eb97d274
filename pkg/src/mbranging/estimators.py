"""scikit-learn style front ends for the multiband combiners.

Each estimator takes calibrated CFR sweeps as ``X``: one sweep (a list of
per-subband :class:`~mbranging.synth.Cfr`) or a list of sweeps. ``fit``
learns the subband geometry (and, for SPBP, the two subsets),
``transform`` returns one combined range profile per sweep as an array
``(n_sweeps, n_range)``, and ``predict`` returns the detections found on
the snapshot-averaged profile.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_fitted_plan, check_grid, check_sweeps, plan_from_cfrs
from .combine import (
    OmpConfig,
    RangeProfile,
    SpbpConfig,
    bp_combine,
    omp_combine,
    spbp_profile,
    spbp_search_k1,
    spbp_select_k0,
)
from .metrics import DetectionSet, PeakDetectConfig, detect_peaks, subband_profiles
from .preproc import DEFAULT_OVERSAMPLING
from .subband import nominal_resolution, total_aperture


class _RangerBase(TransformerMixin, BaseEstimator):
    kind = "bp"

    def _peak_config(self):
        sep = self.min_separation
        if sep is None:
            sep = nominal_resolution(total_aperture(self.plan_))
        return PeakDetectConfig(self.threshold_db, sep, self.exclusion)

    def _fit_plan(self, X):
        sweeps = check_sweeps(X)
        self.plan_ = plan_from_cfrs(sweeps[0])
        self.grid_ = check_grid(self.grid)
        self.n_subbands_ = self.plan_.K
        return sweeps

    def _sweeps(self, X):
        check_is_fitted(self, "plan_")
        sweeps = check_sweeps(X)
        check_fitted_plan(self.plan_, sweeps[0])
        return sweeps

    def combined_profile(self, X) -> RangeProfile:
        """Profile averaged over sweeps (coherently where the profile is complex)."""
        values = self.transform(X)
        mean = values.mean(axis=0)
        return RangeProfile(self.grid_, mean, self.kind)

    def predict(self, X) -> DetectionSet:
        return detect_peaks(self.combined_profile(X), self._peak_config())


class BackprojectionRanger(_RangerBase):
    """Coherent backprojection of per-subband range profiles."""

    kind = "bp"

    def __init__(self, grid=(0.5, 3.0, 5e-4), oversampling=DEFAULT_OVERSAMPLING,
                 threshold_db=10.0, min_separation=None, exclusion=0.3):
        self.grid = grid
        self.oversampling = oversampling
        self.threshold_db = threshold_db
        self.min_separation = min_separation
        self.exclusion = exclusion

    def fit(self, X, y=None):
        self._fit_plan(X)
        return self

    def subband_profiles(self, sweep):
        return subband_profiles(sweep, self.grid_, self.oversampling)

    def transform(self, X):
        sweeps = self._sweeps(X)
        return np.array([bp_combine(self.subband_profiles(s)).values for s in sweeps])


class SpbpRanger(BackprojectionRanger):
    """Subsets-product backprojection.

    ``fit`` draws K0 and searches K1 on the plan's ideal RAF; profiles are
    magnitudes, averaged incoherently across sweeps.
    """

    kind = "spbp"

    def __init__(self, grid=(0.5, 3.0, 5e-4), oversampling=DEFAULT_OVERSAMPLING,
                 threshold_db=10.0, min_separation=None, exclusion=0.3,
                 mainlobe=None, r_max=1.0, min_cardinality=2, min_coverage=0.5,
                 seed=0, n_jobs=1):
        super().__init__(grid, oversampling, threshold_db, min_separation, exclusion)
        self.mainlobe = mainlobe
        self.r_max = r_max
        self.min_cardinality = min_cardinality
        self.min_coverage = min_coverage
        self.seed = seed
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        self._fit_plan(X)
        cfg = SpbpConfig(self.mainlobe, self.r_max, self.min_cardinality,
                         self.min_coverage, self.seed, n_jobs=self.n_jobs)
        self.k0_ = spbp_select_k0(self.plan_.K, self.seed)
        self.k1_ = spbp_search_k1(self.plan_, self.k0_, cfg)
        return self

    def transform(self, X):
        check_is_fitted(self, "k1_")
        sweeps = self._sweeps(X)
        return np.array([
            spbp_profile(self.subband_profiles(s), self.k0_, self.k1_).values for s in sweeps
        ])


class OmpRanger(_RangerBase):
    """On-grid OMP over the stacked multiband dictionary.

    ``predict`` runs OMP once on the snapshot-averaged CFRs and reports the
    selected atoms whose amplitude is within ``threshold_db`` of the
    strongest one.
    """

    kind = "omp"

    def __init__(self, grid=None, max_atoms=10, residual_threshold=1e-3,
                 threshold_db=10.0, min_separation=None, exclusion=0.3):
        self.grid = grid
        self.max_atoms = max_atoms
        self.residual_threshold = residual_threshold
        self.threshold_db = threshold_db
        self.min_separation = min_separation
        self.exclusion = exclusion

    def fit(self, X, y=None):
        sweeps = check_sweeps(X)
        self.plan_ = plan_from_cfrs(sweeps[0])
        self.n_subbands_ = self.plan_.K
        grid = None if self.grid is None else check_grid(self.grid)
        self.config_ = OmpConfig(grid, self.max_atoms, self.residual_threshold)
        self.grid_ = self.config_.resolved_grid(self.plan_)
        return self

    def transform(self, X):
        sweeps = self._sweeps(X)
        return np.array([omp_combine(s, self.plan_, self.config_).profile.values for s in sweeps])

    def solve(self, X):
        """OMP on the coherent average of all sweeps."""
        sweeps = self._sweeps(X)
        mean = [
            c.advance(np.mean([s[k].samples for s in sweeps], axis=0), c.state)
            for k, c in enumerate(sweeps[0])
        ]
        return omp_combine(mean, self.plan_, self.config_)

    def combined_profile(self, X) -> RangeProfile:
        return self.solve(X).profile

    def predict(self, X) -> DetectionSet:
        """Selected atoms outside the exclusion zone, within ``threshold_db``
        of the strongest, thinned greedily to ``min_separation``."""
        res = self.solve(X)
        cfg = self._peak_config()
        mag = np.abs(res.amplitudes)
        cand = np.flatnonzero(np.abs(res.ranges) > cfg.exclusion)
        if cand.size:
            cand = cand[mag[cand] >= mag[cand].max() * 10 ** (-cfg.threshold_db / 20)]
        kept: list[int] = []
        for i in cand[np.argsort(-mag[cand], kind="stable")]:
            if all(abs(res.ranges[i] - res.ranges[j]) >= cfg.min_separation for j in kept):
                kept.append(int(i))
        kept.sort(key=lambda i: res.ranges[i])
        return DetectionSet(res.ranges[kept], mag[kept], "omp")
