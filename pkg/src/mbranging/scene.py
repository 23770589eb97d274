"""Scattering scenes with frequency-dependent complex RCS."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .exceptions import InvalidArgumentError, SingularityError
from .subband import SPEED_OF_LIGHT


@dataclass(frozen=True)
class Isotropic:
    """Frequency-flat scatterer (corner-reflector-like)."""

    rcs: float = 1.0
    phase: float = 0.0

    def __post_init__(self):
        if self.rcs < 0:
            raise InvalidArgumentError("rcs must be non-negative")

    def phase_at(self, k: int, f: float) -> float:
        return self.phase


@dataclass(frozen=True)
class PhaseDrift:
    """Scattering phase drifting linearly with carrier frequency.

    The phase is ``phase + drift_rate * (f - reference_frequency)``.
    """

    rcs: float = 1.0
    phase: float = 0.0
    drift_rate: float = 0.0  # rad/Hz
    reference_frequency: float = 0.0

    def __post_init__(self):
        if self.rcs < 0:
            raise InvalidArgumentError("rcs must be non-negative")

    def phase_at(self, k: int, f: float) -> float:
        return self.phase + self.drift_rate * (f - self.reference_frequency)


@dataclass(frozen=True)
class RandomPhase:
    """Independent Gaussian phase per subband, reproducible from ``(seed, k)``."""

    rcs: float = 1.0
    seed: int = 0
    phase_std: float = 0.0
    phase: float = 0.0

    def __post_init__(self):
        if self.rcs < 0:
            raise InvalidArgumentError("rcs must be non-negative")
        if self.phase_std < 0:
            raise InvalidArgumentError("phase_std must be non-negative")

    def phase_at(self, k: int, f: float) -> float:
        # Derived from (seed, k) only, so call order never matters.
        z = np.random.default_rng([int(self.seed), int(k)]).standard_normal()
        return self.phase + self.phase_std * float(z)


RcsModel = Union[Isotropic, PhaseDrift, RandomPhase]


@dataclass(frozen=True)
class ScatteringCenter:
    range: float
    model: RcsModel = field(default_factory=Isotropic)

    def __post_init__(self):
        if not self.range > 0:
            raise InvalidArgumentError("scattering center range must be positive")

    @property
    def delay(self) -> float:
        return 2.0 * self.range / SPEED_OF_LIGHT


@dataclass(frozen=True)
class Scene:
    """Static scattering centers plus antenna gains.

    Gains are linear and either scalar or one value per subband. When
    ``amplitude_frequency`` is set, the radar equation is evaluated at that
    single frequency for every subband, so isotropic centers have a
    coefficient that is exactly constant across subbands; otherwise each
    subband uses its own carrier.
    """

    centers: tuple[ScatteringCenter, ...] = ()
    gain_tx: float | Sequence[float] = 1.0
    gain_rx: float | Sequence[float] = 1.0
    amplitude_frequency: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "centers", tuple(self.centers))
        for g in (self.gain_tx, self.gain_rx):
            if np.any(np.asarray(g, dtype=float) <= 0):
                raise InvalidArgumentError("antenna gains must be positive")

    def __len__(self):
        return len(self.centers)

    def gains(self, k: int) -> tuple[float, float]:
        def pick(g):
            arr = np.asarray(g, dtype=float)
            return float(arr) if arr.ndim == 0 else float(arr[k])

        return pick(self.gain_tx), pick(self.gain_rx)


def amplitude(center: ScatteringCenter, f: float, gains=(1.0, 1.0)) -> float:
    """Scattering amplitude from the monostatic radar equation."""
    if center.range == 0:
        raise SingularityError("radar equation is singular at zero range")
    if not f > 0:
        raise InvalidArgumentError("frequency must be positive")
    g_tx, g_rx = gains
    num = SPEED_OF_LIGHT**2 * g_tx * g_rx * center.model.rcs
    den = f**2 * (4 * np.pi) ** 3 * center.range**4
    return float(np.sqrt(num / den))


def scattering_coefficient(
    center: ScatteringCenter,
    k: int,
    f: float,
    gains=(1.0, 1.0),
    amplitude_frequency: float | None = None,
) -> complex:
    rho = amplitude(center, amplitude_frequency or f, gains)
    return complex(rho * np.exp(1j * center.model.phase_at(k, f)))


def scene_coefficients(scene: Scene, k: int, f: float) -> np.ndarray:
    """Complex coefficient of every center in subband ``k``."""
    return np.array(
        [
            scattering_coefficient(c, k, f, scene.gains(k), scene.amplitude_frequency)
            for c in scene.centers
        ],
        dtype=complex,
    )
