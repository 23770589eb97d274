"""Multiband combination: BP, RAF analysis, SPBP subset search and OMP."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

import numpy as np

from .exceptions import (
    InvalidArgumentError,
    NoCandidateError,
    UndefinedPSLRError,
)
from .preproc import Cir
from .subband import SPEED_OF_LIGHT, SubbandPlan, nominal_resolution, total_aperture
from .synth import CALIBRATED, Cfr

MAX_SPBP_SUBBANDS = 20


@dataclass(frozen=True)
class RangeGrid:
    r_min: float
    r_max: float
    step: float

    def __post_init__(self):
        if not self.step > 0:
            raise InvalidArgumentError("grid step must be positive")
        if not self.r_min < self.r_max:
            raise InvalidArgumentError("grid needs r_min < r_max")

    @property
    def size(self) -> int:
        return int(np.floor((self.r_max - self.r_min) / self.step + 1e-9)) + 1

    @property
    def ranges(self) -> np.ndarray:
        return self.r_min + self.step * np.arange(self.size)

    def index(self, r: float) -> int:
        """Index of the grid sample nearest to ``r``."""
        i = int(np.rint((r - self.r_min) / self.step))
        if not 0 <= i < self.size:
            raise InvalidArgumentError(f"range {r:g} m outside grid")
        return i

    @classmethod
    def symmetric(cls, half_width: float, step: float) -> "RangeGrid":
        n = int(np.rint(half_width / step))
        return cls(-n * step, n * step, step)


@dataclass(frozen=True, eq=False)
class RangeProfile:
    """Complex (or magnitude-only) samples on a range grid.

    ``kind`` is one of ``"subband"``, ``"bp"``, ``"spbp"``, ``"omp"``,
    ``"raf"``; SPBP profiles are real and non-negative.
    """

    grid: RangeGrid
    values: np.ndarray
    kind: str = "bp"
    subband: int | None = None

    def __post_init__(self):
        values = np.asarray(self.values)
        object.__setattr__(self, "values", values)
        if values.shape != (self.grid.size,):
            raise InvalidArgumentError("profile length does not match its grid")
        if self.kind == "spbp" and (np.iscomplexobj(values) or np.any(values < 0)):
            raise InvalidArgumentError("SPBP profiles carry magnitudes only")

    @property
    def ranges(self) -> np.ndarray:
        return self.grid.ranges

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.values)

    def at(self, r: float):
        return self.values[self.grid.index(r)]


@dataclass(frozen=True)
class SpbpConfig:
    """Settings of the SPBP subset search.

    ``mainlobe`` and ``r_max`` default to 1.2x the plan's nominal resolution
    and 1 m. ``min_coverage`` is the minimum span of a candidate subset as a
    fraction of the plan aperture. ``grid_step`` defaults to a quarter of
    ``mainlobe`` capped at 1 mm.
    """

    mainlobe: float | None = None
    r_max: float = 1.0
    min_cardinality: int = 2
    min_coverage: float = 0.5
    seed: int = 0
    grid_step: float | None = None
    n_jobs: int = 1

    def __post_init__(self):
        if self.mainlobe is not None and not self.mainlobe > 0:
            raise InvalidArgumentError("mainlobe half-width must be positive")
        if self.min_cardinality < 2:
            raise InvalidArgumentError("min_cardinality must be >= 2")
        if not self.r_max > 0:
            raise InvalidArgumentError("r_max must be positive")

    def resolved_mainlobe(self, plan: SubbandPlan) -> float:
        if self.mainlobe is not None:
            return self.mainlobe
        return 1.2 * nominal_resolution(total_aperture(plan))

    def search_grid(self, plan: SubbandPlan) -> RangeGrid:
        step = self.grid_step or min(1e-3, self.resolved_mainlobe(plan) / 4)
        return RangeGrid.symmetric(self.r_max, step)


@dataclass(frozen=True)
class OmpConfig:
    """On-grid OMP settings; ``grid=None`` means 0.5-3 m at resolution/4."""

    grid: RangeGrid | None = None
    max_atoms: int = 10
    residual_threshold: float = 1e-3

    def __post_init__(self):
        if self.max_atoms < 1:
            raise InvalidArgumentError("max_atoms must be >= 1")
        if not 0 <= self.residual_threshold <= 1:
            raise InvalidArgumentError("residual_threshold must lie in [0, 1]")

    def resolved_grid(self, plan: SubbandPlan) -> RangeGrid:
        if self.grid is not None:
            return self.grid
        return RangeGrid(0.5, 3.0, nominal_resolution(total_aperture(plan)) / 4)


def range_profile(cir: Cir, grid: RangeGrid) -> RangeProfile:
    """Carrier-phase-compensated profile ``h(2R/c) * exp(j 4 pi f R / c)``."""
    r = grid.ranges
    h = cir.at(2.0 * r / SPEED_OF_LIGHT)
    eta = h * np.exp(4j * np.pi * cir.carrier * r / SPEED_OF_LIGHT)
    return RangeProfile(grid, eta, "subband", cir.index)


def _check_same_grid(profiles: Sequence[RangeProfile]) -> RangeGrid:
    if not profiles:
        raise InvalidArgumentError("no profiles to combine")
    grid = profiles[0].grid
    for p in profiles[1:]:
        if p.grid != grid:
            raise InvalidArgumentError("profiles are on different grids")
    return grid


def bp_combine(profiles: Sequence[RangeProfile]) -> RangeProfile:
    """Coherent mean of per-subband profiles."""
    grid = _check_same_grid(profiles)
    eta = np.mean([p.values for p in profiles], axis=0)
    return RangeProfile(grid, eta, "bp")


def _raf_terms(carriers, bandwidths, r) -> np.ndarray:
    """Per-subband RAF terms ``sinc(2 B R / c) exp(j 4 pi f R / c)``, shape (K, G)."""
    carriers = np.asarray(carriers, dtype=float)[:, None]
    bandwidths = np.asarray(bandwidths, dtype=float)[:, None]
    r = np.asarray(r, dtype=float)[None, :]
    return np.sinc(2 * bandwidths * r / SPEED_OF_LIGHT) * np.exp(
        4j * np.pi * carriers * r / SPEED_OF_LIGHT
    )


def raf(plan: SubbandPlan, grid: RangeGrid, indices: Sequence[int] | None = None) -> RangeProfile:
    """Ideal isotropic-target RAF of the plan (or a subset), ``Psi(0) = 1``."""
    idx = list(range(plan.K)) if indices is None else sorted(indices)
    if not idx:
        raise InvalidArgumentError("empty subband subset")
    terms = _raf_terms(plan.carriers[idx], plan.bandwidths[idx], grid.ranges)
    return RangeProfile(grid, terms.mean(axis=0), "raf")


def dirichlet(r, K: int, spacing: float, f0: float = 0.0):
    """Dirichlet kernel ``sum_k exp(j 4 pi (f0 + k*spacing) R / c)`` in closed form.

    Removable singularities (``sin`` in the denominator at zero) are
    replaced by their limit.
    """
    if not spacing > 0:
        raise InvalidArgumentError("carrier spacing must be positive")
    r = np.asarray(r, dtype=float)
    x = 2 * np.pi * spacing * r / SPEED_OF_LIGHT
    den = np.sin(x)
    num = np.sin(K * x)
    singular = np.abs(den) < 1e-12
    # At x = m*pi the ratio tends to K * cos(K m pi) / cos(m pi).
    m = np.rint(x / np.pi)
    limit = K * np.cos(K * m * np.pi) / np.cos(m * np.pi)
    ratio = np.where(singular, limit, num / np.where(singular, 1.0, den))
    phase = np.exp(2j * np.pi / SPEED_OF_LIGHT * (2 * f0 + (K - 1) * spacing) * r)
    out = phase * ratio
    return out if out.ndim else complex(out)


def pslr(profile: RangeProfile, mainlobe: float, r_max: float) -> float:
    """Peak-to-sidelobe ratio (dB) within ``[-r_max, r_max]``.

    Sidelobes are all samples farther than ``mainlobe`` from the global
    magnitude peak.
    """
    r = profile.ranges
    mag = profile.magnitude
    window = np.abs(r) <= r_max + 1e-12
    if not window.any():
        raise UndefinedPSLRError("no samples within r_max")
    r_w, mag_w = r[window], mag[window]
    ipk = int(np.argmax(mag_w))
    side = np.abs(r_w - r_w[ipk]) > mainlobe
    if not side.any():
        raise UndefinedPSLRError("sidelobe region is empty")
    peak, worst = mag_w[ipk], mag_w[side].max()
    if worst == 0:
        return np.inf
    return float(20 * np.log10(peak / worst))


def find_lobes(profile: RangeProfile, r_max: float | None = None) -> list[tuple[float, float]]:
    """Local maxima outside the main lobe as ``(range, level_dB)``, strongest first.

    The main lobe extends from the global peak to the first local minimum on
    either side; levels are relative to the peak.
    """
    mag = profile.magnitude
    r = profile.ranges
    if r_max is not None:
        keep = np.abs(r) <= r_max + 1e-12
        mag, r = mag[keep], r[keep]
    ipk = int(np.argmax(mag))
    lo = ipk
    while lo > 0 and mag[lo - 1] < mag[lo]:
        lo -= 1
    hi = ipk
    while hi < mag.size - 1 and mag[hi + 1] < mag[hi]:
        hi += 1
    inner = np.arange(1, mag.size - 1)
    is_max = (mag[inner] >= mag[inner - 1]) & (mag[inner] > mag[inner + 1])
    peaks = inner[is_max & ((inner < lo) | (inner > hi))]
    order = peaks[np.argsort(-mag[peaks], kind="stable")]
    with np.errstate(divide="ignore"):
        return [(float(r[i]), float(20 * np.log10(mag[i] / mag[ipk]))) for i in order]


def spbp_select_k0(K: int, seed: int = 0) -> tuple[int, ...]:
    """Keep both edge subbands plus K-3 random interior ones (drop one interior)."""
    if K < 3:
        raise InvalidArgumentError("SPBP needs at least 3 subbands")
    rng = np.random.default_rng(seed)
    interior = rng.choice(np.arange(1, K - 1), size=K - 3, replace=False)
    return tuple(sorted({0, K - 1, *(int(i) for i in interior)}))


def _span_fraction(plan: SubbandPlan, subset: Sequence[int]) -> float:
    lo = min(plan.subbands[i].low for i in subset)
    hi = max(plan.subbands[i].high for i in subset)
    return (hi - lo) / total_aperture(plan)


def spbp_candidates(plan: SubbandPlan, k0: Sequence[int], cfg: SpbpConfig) -> list[tuple[int, ...]]:
    """Feasible K1 subsets in canonical (size, lexicographic) order."""
    K = plan.K
    full = tuple(range(K))
    k0 = tuple(sorted(k0))
    out = []
    for size in range(cfg.min_cardinality, K + 1):
        for subset in combinations(full, size):
            if subset == full or subset == k0:
                continue
            if _span_fraction(plan, subset) + 1e-12 < cfg.min_coverage:
                continue
            out.append(subset)
    return out


# PSLR values closer than this are ties, resolved by candidate order.
PSLR_TIE_DB = 1e-9


def spbp_search_k1(plan: SubbandPlan, k0: Sequence[int], cfg: SpbpConfig | None = None) -> tuple[int, ...]:
    """Subset whose RAF, multiplied with ``|Psi_K0|``, has the best PSLR.

    Best means the largest peak-to-sidelobe ratio. Ties go to the smaller
    subset, then the lexicographically smaller one.
    """
    cfg = cfg or SpbpConfig()
    K = plan.K
    if K < 3:
        raise InvalidArgumentError("SPBP needs at least 3 subbands")
    if K > MAX_SPBP_SUBBANDS:
        raise InvalidArgumentError(f"exhaustive SPBP search is capped at {MAX_SPBP_SUBBANDS} subbands")
    candidates = spbp_candidates(plan, k0, cfg)
    if not candidates:
        raise NoCandidateError("no subset satisfies the SPBP constraints")

    grid = cfg.search_grid(plan)
    r = grid.ranges
    mainlobe = cfg.resolved_mainlobe(plan)
    terms = _raf_terms(plan.carriers, plan.bandwidths, r)
    gamma0 = np.abs(terms[list(k0)].mean(axis=0))
    side = np.abs(r) > mainlobe
    if not side.any():
        raise UndefinedPSLRError("sidelobe region is empty")
    ipk = int(np.argmin(np.abs(r)))

    masks = np.zeros((len(candidates), K))
    for row, subset in enumerate(candidates):
        masks[row, list(subset)] = 1.0 / len(subset)

    def score(chunk: slice) -> np.ndarray:
        gamma = np.abs(masks[chunk] @ terms) * gamma0
        with np.errstate(divide="ignore"):
            return 20 * np.log10(gamma[:, ipk] / gamma[:, side].max(axis=1))

    # Chunks bound memory; each chunk is scored independently, so the final
    # reduction below does not depend on scheduling.
    chunk = max(1, int(2e6 // r.size))
    slices = [slice(i, i + chunk) for i in range(0, len(candidates), chunk)]
    if cfg.n_jobs > 1 and len(slices) > 1:
        with ThreadPoolExecutor(max_workers=cfg.n_jobs) as pool:
            parts = list(pool.map(score, slices))
    else:
        parts = [score(s) for s in slices]
    scores = np.concatenate(parts)
    best = scores.max()
    winner = int(np.flatnonzero(scores >= best - PSLR_TIE_DB)[0])
    return candidates[winner]


def spbp_profile(profiles: Sequence[RangeProfile], k0: Sequence[int], k1: Sequence[int]) -> RangeProfile:
    """``|mean_{K0} eta_k| * |mean_{K1} eta_k|`` (magnitude only)."""
    grid = _check_same_grid(profiles)
    stack = np.array([p.values for p in profiles])
    a = np.abs(stack[list(k0)].mean(axis=0))
    b = np.abs(stack[list(k1)].mean(axis=0))
    return RangeProfile(grid, a * b, "spbp")


@dataclass(frozen=True)
class OmpResult:
    ranges: np.ndarray
    amplitudes: np.ndarray
    profile: RangeProfile
    residual_fraction: float
    residual_history: list[float] = field(default_factory=list)


def omp_dictionary(frequencies: np.ndarray, grid: RangeGrid) -> np.ndarray:
    """Unit-energy atoms ``exp(-j 2 pi f 2R/c)``, one column per grid range."""
    tau = 2 * grid.ranges / SPEED_OF_LIGHT
    atoms = np.exp(-2j * np.pi * np.outer(frequencies, tau))
    return atoms / np.sqrt(frequencies.size)


def omp(y: np.ndarray, atoms: np.ndarray, max_atoms: int, residual_threshold: float):
    """Orthogonal matching pursuit over unit-norm ``atoms`` columns.

    Returns the selected column indices, their least-squares coefficients and
    the residual-energy fraction after each iteration.
    """
    y = np.asarray(y, dtype=complex)
    energy = float(np.vdot(y, y).real)
    residual = y.copy()
    support: list[int] = []
    coef = np.zeros(0, dtype=complex)
    history: list[float] = []
    if energy == 0:
        return support, coef, [0.0]
    limit = min(max_atoms, atoms.shape[1], atoms.shape[0])
    while len(support) < limit:
        corr = np.abs(atoms.conj().T @ residual)
        corr[support] = -1.0
        support.append(int(np.argmax(corr)))
        sub = atoms[:, support]
        coef, *_ = np.linalg.lstsq(sub, y, rcond=None)
        residual = y - sub @ coef
        frac = float(np.vdot(residual, residual).real) / energy
        history.append(frac)
        if frac < residual_threshold:
            break
    return support, coef, history


def stack_cfrs(cfrs: Sequence[Cfr]) -> tuple[np.ndarray, np.ndarray]:
    """Observation vector and matching subcarrier frequencies over all subbands."""
    y = np.concatenate([c.samples for c in cfrs])
    f = np.concatenate([c.frequencies for c in cfrs])
    return y, f


def omp_combine(cfrs: Sequence[Cfr], plan: SubbandPlan, cfg: OmpConfig | None = None) -> OmpResult:
    """Sparse multiband range reconstruction with OMP.

    Amplitudes are in CFR units: an isotropic scatterer of coefficient
    ``rho e^{j theta}`` yields that value.
    """
    cfg = cfg or OmpConfig()
    for c in cfrs:
        if c.state != CALIBRATED:
            raise InvalidArgumentError("OMP expects calibrated CFRs")
    if len(cfrs) != plan.K:
        raise InvalidArgumentError("need one CFR per subband")
    grid = cfg.resolved_grid(plan)
    if grid.size < 1:
        raise InvalidArgumentError("empty OMP grid")
    y, f = stack_cfrs(cfrs)
    atoms = omp_dictionary(f, grid)
    support, coef, history = omp(y, atoms, cfg.max_atoms, cfg.residual_threshold)
    amplitudes = np.asarray(coef) / np.sqrt(f.size)
    values = np.zeros(grid.size, dtype=complex)
    values[support] = amplitudes
    ranges = grid.ranges[support]
    order = np.argsort(ranges)
    return OmpResult(
        ranges[order],
        amplitudes[order],
        RangeProfile(grid, values, "omp"),
        history[-1] if history else 0.0,
        history,
    )
