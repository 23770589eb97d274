"""Per-subband CFR synthesis: ideal channel, hardware, clock jitter, noise."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .exceptions import InvalidArgumentError
from .scene import Scene, scene_coefficients
from .subband import SPEED_OF_LIGHT, SubbandPlan

IDEAL = "ideal"
MEASURED = "measured"
CALIBRATED = "calibrated"
_NEXT_STATE = {IDEAL: MEASURED, MEASURED: CALIBRATED}

# Stream ids keep per-(snapshot, subband) generators independent per effect.
_NOISE_STREAM = 1
_JITTER_STREAM = 2


@dataclass(frozen=True, eq=False)
class Cfr:
    """Channel frequency response samples of one subband.

    ``samples[i]`` is the channel at ``carrier + n*subcarrier_spacing`` with
    ``n = i - N/2``.
    """

    index: int
    carrier: float
    bandwidth: float
    subcarrier_spacing: float
    samples: np.ndarray
    state: str = IDEAL

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=complex)
        object.__setattr__(self, "samples", samples)
        if self.state not in (IDEAL, MEASURED, CALIBRATED):
            raise InvalidArgumentError(f"unknown CFR state {self.state!r}")
        n = self.bandwidth / self.subcarrier_spacing
        if samples.ndim != 1 or abs(samples.size - n) > 1e-6 * n:
            raise InvalidArgumentError(
                f"CFR holds {samples.size} samples, expected {n:g}"
            )

    @property
    def n_subcarriers(self) -> int:
        return self.samples.size

    @property
    def frequencies(self) -> np.ndarray:
        n = self.n_subcarriers
        return self.carrier + np.arange(-n // 2, n // 2) * self.subcarrier_spacing

    def advance(self, samples: np.ndarray, state: str) -> "Cfr":
        allowed = {self.state, _NEXT_STATE.get(self.state)}
        if state not in allowed:
            raise InvalidArgumentError(f"cannot go from {self.state} to {state}")
        return replace(self, samples=np.asarray(samples, dtype=complex), state=state)


def ideal_cfr(scene: Scene, plan: SubbandPlan, k: int) -> Cfr:
    if not 0 <= k < plan.K:
        raise InvalidArgumentError(f"subband index {k} out of range")
    band = plan.subbands[k]
    freqs = plan.subcarrier_frequencies(k)
    samples = np.zeros(freqs.size, dtype=complex)
    coefs = scene_coefficients(scene, k, band.carrier)
    for coef, center in zip(coefs, scene.centers):
        samples += coef * np.exp(-2j * np.pi * freqs * center.delay)
    return Cfr(k, band.carrier, band.bandwidth, plan.ofdm.subcarrier_spacing, samples, IDEAL)


@dataclass(frozen=True, eq=False)
class HardwareResponse:
    """Complex response of the measurement chain, one array per subband."""

    responses: tuple[np.ndarray, ...]
    ripple_db: float = 0.0
    phase_ripple_deg: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        arrs = tuple(np.asarray(r, dtype=complex) for r in self.responses)
        object.__setattr__(self, "responses", arrs)
        for r in arrs:
            if np.any(np.abs(r) == 0) or not np.all(np.isfinite(r)):
                raise InvalidArgumentError("hardware response must be finite and nonzero")

    def __getitem__(self, k: int) -> np.ndarray:
        return self.responses[k]

    @classmethod
    def identity(cls, plan: SubbandPlan) -> "HardwareResponse":
        return cls(tuple(np.ones(plan.n_subcarriers(k), complex) for k in range(plan.K)))

    @classmethod
    def ripple(
        cls,
        plan: SubbandPlan,
        ripple_db: float = 1.0,
        phase_ripple_deg: float = 25.0,
        seed: int = 0,
        n_components: int = 4,
    ) -> "HardwareResponse":
        """Smooth random gain/phase ripple across the whole swept band.

        The phase is a sum of a few random sinusoids in absolute frequency,
        scaled so its peak excursion over the plan equals
        ``phase_ripple_deg``; the gain ripple is built the same way in dB.
        """
        rng = np.random.default_rng(seed)
        f_lo = min(s.low for s in plan.subbands)
        span = max(s.high for s in plan.subbands) - f_lo
        periods = span / rng.uniform(1.0, 6.0, size=(2, n_components))
        offsets = rng.uniform(0, 2 * np.pi, size=(2, n_components))
        weights = rng.uniform(0.5, 1.0, size=(2, n_components))

        def shape(f, row):
            x = (f[:, None] - f_lo) / periods[row]
            return (weights[row] * np.sin(2 * np.pi * x + offsets[row])).sum(axis=1)

        all_f = np.concatenate([plan.subcarrier_frequencies(k) for k in range(plan.K)])
        phase_scale = np.max(np.abs(shape(all_f, 0)))
        gain_scale = np.max(np.abs(shape(all_f, 1)))
        responses = []
        for k in range(plan.K):
            f = plan.subcarrier_frequencies(k)
            phase = np.deg2rad(phase_ripple_deg) * shape(f, 0) / phase_scale
            gain_db = ripple_db * shape(f, 1) / gain_scale
            responses.append(10 ** (gain_db / 20) * np.exp(1j * phase))
        return cls(tuple(responses), ripple_db, phase_ripple_deg, seed)


@dataclass(frozen=True)
class ClockModel:
    """LO non-idealities.

    Only the white phase-noise floor acts on the samples. The timing offset
    cancels in a monostatic link and the CFO rotation is negligible at
    metre ranges, so both are carried for documentation and ignored.
    """

    alpha0_dbc_hz: float = -np.inf
    lo_frequency: float = 10e6
    timing_offset: float = 0.0
    cfo: float = 0.0

    def __post_init__(self):
        if not self.lo_frequency > 0:
            raise InvalidArgumentError("lo_frequency must be positive")

    @property
    def alpha0_linear(self) -> float:
        return 10 ** (self.alpha0_dbc_hz / 10)


@dataclass(frozen=True)
class NoiseModel:
    """AWGN at ``snr_db`` per subcarrier; ``snr_db=None`` means noiseless."""

    snr_db: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.snr_db is not None and not np.isfinite(self.snr_db):
            raise InvalidArgumentError("snr_db must be finite or None")

    @property
    def noiseless(self) -> bool:
        return self.snr_db is None


def apply_hardware(cfr: Cfr, hw: HardwareResponse) -> Cfr:
    if cfr.state != IDEAL:
        raise InvalidArgumentError("apply_hardware expects an ideal CFR")
    resp = hw[cfr.index]
    if resp.shape != cfr.samples.shape:
        raise InvalidArgumentError("hardware response size mismatch")
    return cfr.advance(cfr.samples * resp, MEASURED)


def phase_noise_std(f: float, bandwidth: float, clock: ClockModel) -> float:
    """Std (rad) of the differential LO phase noise from the white floor."""
    variance = (f / clock.lo_frequency) ** 2 * 2.0 * clock.alpha0_linear * bandwidth
    return float(np.sqrt(variance))


def _rng(seed: int, snapshot: int, k: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), snapshot, k, stream]))


def perturb_clock(cfr: Cfr, clock: ClockModel, seed: int, snapshot: int = 0) -> Cfr:
    if cfr.state != MEASURED:
        raise InvalidArgumentError("perturb_clock expects a measured CFR")
    std = phase_noise_std(cfr.carrier, cfr.bandwidth, clock)
    if std == 0:
        return cfr
    jitter = std * _rng(seed, snapshot, cfr.index, _JITTER_STREAM).standard_normal(cfr.n_subcarriers)
    return cfr.advance(cfr.samples * np.exp(1j * jitter), MEASURED)


def add_noise(cfr: Cfr, noise: NoiseModel, reference: float, snapshot: int = 0) -> Cfr:
    """Add circular Gaussian noise with ``reference**2 / var = 10**(snr/10)``.

    ``reference`` is the strongest target's CFR magnitude in this subband.
    """
    if cfr.state != MEASURED:
        raise InvalidArgumentError("add_noise expects a measured CFR")
    if noise.noiseless:
        return cfr
    if not reference > 0:
        raise InvalidArgumentError("finite SNR needs a nonzero reference level (empty scene?)")
    std = reference / 10 ** (noise.snr_db / 20)
    rng = _rng(noise.seed, snapshot, cfr.index, _NOISE_STREAM)
    z = rng.standard_normal((2, cfr.n_subcarriers))
    w = std * (z[0] + 1j * z[1]) / np.sqrt(2)
    return cfr.advance(cfr.samples + w, MEASURED)


def rx_symbols(cfr: Cfr, pilots: np.ndarray) -> np.ndarray:
    """Received frequency-domain symbols ``Y = X * H`` for known pilots ``X``."""
    pilots = np.asarray(pilots, dtype=complex)
    if pilots.shape != cfr.samples.shape:
        raise InvalidArgumentError("pilot length mismatch")
    return pilots * cfr.samples


def _simulate_subband(scene, plan, hw, clock, noise, snapshot, k):
    cfr = apply_hardware(ideal_cfr(scene, plan, k), hw)
    cfr = perturb_clock(cfr, clock, noise.seed, snapshot)
    coefs = scene_coefficients(scene, k, plan.subbands[k].carrier)
    ref = float(np.max(np.abs(coefs))) if coefs.size else 0.0
    return add_noise(cfr, noise, ref, snapshot)


def simulate_sweep(
    scene: Scene,
    plan: SubbandPlan,
    hw: HardwareResponse | None = None,
    clock: ClockModel | None = None,
    noise: NoiseModel | None = None,
    n_snapshots: int = 1,
    n_jobs: int = 1,
) -> list[list[Cfr]]:
    """Simulate ``n_snapshots`` independent sweeps of measured CFRs.

    Returns ``sweeps[s][k]``. Randomness is keyed by (seed, snapshot,
    subband), so the output does not depend on ``n_jobs``.
    """
    if int(n_snapshots) != n_snapshots or n_snapshots < 1:
        raise InvalidArgumentError("n_snapshots must be a positive integer")
    hw = hw or HardwareResponse.identity(plan)
    clock = clock or ClockModel()
    noise = noise or NoiseModel()
    if len(hw.responses) != plan.K:
        raise InvalidArgumentError("hardware response does not match the plan")

    jobs = [(s, k) for s in range(int(n_snapshots)) for k in range(plan.K)]

    def run(job):
        return _simulate_subband(scene, plan, hw, clock, noise, *job)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            flat = list(pool.map(run, jobs))
    else:
        flat = [run(j) for j in jobs]
    return [flat[s * plan.K:(s + 1) * plan.K] for s in range(int(n_snapshots))]
