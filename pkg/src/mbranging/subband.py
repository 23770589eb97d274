"""Subband plans, 3GPP FR3 allocations and aperture arithmetic."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .exceptions import InvalidArgumentError

SPEED_OF_LIGHT = 299_792_458.0

GHz = 1e9
MHz = 1e6


@dataclass(frozen=True)
class OfdmParams:
    """OFDM numerology shared by every subband of a plan.

    Pilots are unit-magnitude QPSK symbols. When ``pilots`` is given it must
    be at least as long as the largest subband; shorter subbands use the
    leading entries.
    """

    subcarrier_spacing: float = 10 * MHz
    pilot_seed: int = 0
    pilots: tuple[complex, ...] | None = None

    def __post_init__(self):
        if not self.subcarrier_spacing > 0:
            raise InvalidArgumentError("subcarrier_spacing must be positive")
        if self.pilots is not None:
            mags = np.abs(np.asarray(self.pilots, dtype=complex))
            if not np.allclose(mags, 1.0, rtol=0, atol=1e-12):
                raise InvalidArgumentError("pilots must have unit magnitude")

    @property
    def symbol_duration(self) -> float:
        return 1.0 / self.subcarrier_spacing

    def n_subcarriers(self, bandwidth: float) -> int:
        ratio = bandwidth / self.subcarrier_spacing
        n = int(round(ratio))
        if abs(ratio - n) > 1e-6 * max(1.0, ratio):
            raise InvalidArgumentError(
                f"bandwidth {bandwidth:g} Hz is not a multiple of the subcarrier spacing"
            )
        if n < 2 or n % 2:
            raise InvalidArgumentError(f"subcarrier count {n} must be even and >= 2")
        return n

    def pilot_symbols(self, n: int) -> np.ndarray:
        if self.pilots is not None:
            if len(self.pilots) < n:
                raise InvalidArgumentError(f"need {n} pilots, have {len(self.pilots)}")
            return np.asarray(self.pilots[:n], dtype=complex)
        rng = np.random.default_rng(self.pilot_seed)
        qpsk = np.exp(1j * (np.pi / 4 + np.pi / 2 * rng.integers(0, 4, size=n)))
        return qpsk


@dataclass(frozen=True)
class Subband:
    carrier: float
    bandwidth: float

    def __post_init__(self):
        if not (self.bandwidth > 0 and self.carrier > self.bandwidth / 2):
            raise InvalidArgumentError(
                f"subband ({self.carrier:g}, {self.bandwidth:g}) must satisfy f > B/2 > 0"
            )

    @property
    def low(self) -> float:
        return self.carrier - self.bandwidth / 2

    @property
    def high(self) -> float:
        return self.carrier + self.bandwidth / 2


@dataclass(frozen=True)
class SubbandPlan:
    subbands: tuple[Subband, ...]
    ofdm: OfdmParams = field(default_factory=OfdmParams)
    t_switch: float = 10e-3

    def __post_init__(self):
        subbands = tuple(self.subbands)
        object.__setattr__(self, "subbands", subbands)
        if not subbands:
            raise InvalidArgumentError("a plan needs at least one subband")
        carriers = [s.carrier for s in subbands]
        if carriers != sorted(carriers):
            raise InvalidArgumentError("subbands must be sorted by carrier")
        for a, b in zip(subbands, subbands[1:]):
            # Touching edges are allowed; tolerance absorbs float rounding.
            if a.high > b.low + 1e-6:
                raise InvalidArgumentError(
                    f"subbands overlap: [{a.low:g}, {a.high:g}] and [{b.low:g}, {b.high:g}]"
                )
        for s in subbands:
            self.ofdm.n_subcarriers(s.bandwidth)

    def __len__(self) -> int:
        return len(self.subbands)

    @property
    def K(self) -> int:
        return len(self.subbands)

    @property
    def carriers(self) -> np.ndarray:
        return np.array([s.carrier for s in self.subbands])

    @property
    def bandwidths(self) -> np.ndarray:
        return np.array([s.bandwidth for s in self.subbands])

    def n_subcarriers(self, k: int) -> int:
        return self.ofdm.n_subcarriers(self.subbands[k].bandwidth)

    def subcarrier_frequencies(self, k: int) -> np.ndarray:
        """Absolute frequencies ``f_k + n*df`` for ``n = -N/2 .. N/2-1``."""
        n = self.n_subcarriers(k)
        offsets = np.arange(-n // 2, n // 2) * self.ofdm.subcarrier_spacing
        return self.subbands[k].carrier + offsets

    def subset(self, indices: Iterable[int]) -> "SubbandPlan":
        idx = sorted(set(indices))
        return SubbandPlan(tuple(self.subbands[i] for i in idx), self.ofdm, self.t_switch)


@dataclass(frozen=True)
class AllocationSet:
    intervals: tuple[tuple[str, float, float], ...]

    def __post_init__(self):
        labels = [lab for lab, _, _ in self.intervals]
        if len(set(labels)) != len(labels):
            raise InvalidArgumentError("allocation labels must be unique")
        for lab, lo, hi in self.intervals:
            if not lo < hi:
                raise InvalidArgumentError(f"interval {lab} has f_low >= f_high")

    def __getitem__(self, label: str) -> tuple[float, float]:
        for lab, lo, hi in self.intervals:
            if lab == label:
                return lo, hi
        raise KeyError(label)

    @property
    def labels(self) -> list[str]:
        return [lab for lab, _, _ in self.intervals]


def make_contiguous_sweep(f_start, bandwidth, K, ofdm=None, t_switch=10e-3) -> SubbandPlan:
    """K equal subbands of width ``bandwidth`` with carriers ``f_start + k*bandwidth``."""
    if not bandwidth > 0:
        raise InvalidArgumentError("bandwidth must be positive")
    if int(K) != K or K < 1:
        raise InvalidArgumentError("K must be a positive integer")
    ofdm = ofdm or OfdmParams()
    bands = tuple(Subband(f_start + k * bandwidth, bandwidth) for k in range(int(K)))
    return SubbandPlan(bands, ofdm, t_switch)


def gpp_fr3_allocations() -> AllocationSet:
    """The five FR3 intervals S1..S5 under 3GPP consideration (Hz)."""
    return AllocationSet((
        ("S1", 7.125 * GHz, 8.5 * GHz),
        ("S2", 8.5 * GHz, 10.5 * GHz),
        ("S3", 12.7 * GHz, 13.25 * GHz),
        ("S4", 14.8 * GHz, 15.35 * GHz),
        ("S5", 15.35 * GHz, 17.3 * GHz),
    ))


def plan_from_allocations(
    alloc: AllocationSet,
    selection: Sequence[str],
    granularity: float | None = 0.5 * GHz,
    ofdm: OfdmParams | None = None,
    t_switch: float = 10e-3,
) -> SubbandPlan:
    """Approximate selected allocation intervals with a subband plan.

    With a ``granularity``, tiles of that width lie on a single grid that
    starts at the lowest selected low edge; every tile intersecting a
    selected interval is kept, so tiles never overlap and the last tile of
    an interval may overhang its high edge. With ``granularity=None`` each
    interval becomes one subband matching it exactly.
    """
    selection = list(selection)
    if not selection:
        raise InvalidArgumentError("empty allocation selection")
    ofdm = ofdm or OfdmParams()
    try:
        edges = sorted(alloc[label] for label in selection)
    except KeyError as exc:
        raise InvalidArgumentError(f"unknown allocation label {exc.args[0]!r}") from None

    if granularity is None:
        bands = tuple(Subband((lo + hi) / 2, hi - lo) for lo, hi in edges)
        return SubbandPlan(bands, ofdm, t_switch)

    if not granularity > 0:
        raise InvalidArgumentError("granularity must be positive")
    anchor = edges[0][0]
    tiles: set[int] = set()
    for lo, hi in edges:
        # 1e-9 slack keeps exact edge hits from spawning an empty tile.
        first = math.floor((lo - anchor) / granularity + 1e-9)
        last = math.ceil((hi - anchor) / granularity - 1e-9)
        tiles.update(range(first, last))
    bands = tuple(
        Subband(anchor + (i + 0.5) * granularity, granularity) for i in sorted(tiles)
    )
    return SubbandPlan(bands, ofdm, t_switch)


def total_aperture(plan: SubbandPlan) -> float:
    return max(s.high for s in plan.subbands) - min(s.low for s in plan.subbands)


def nominal_resolution(aperture: float) -> float:
    if not aperture > 0:
        raise InvalidArgumentError("aperture must be positive")
    return SPEED_OF_LIGHT / (2.0 * aperture)


def sweep_duration(plan: SubbandPlan) -> float:
    return plan.K * plan.t_switch
