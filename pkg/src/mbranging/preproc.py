"""CFR estimation, hardware calibration and oversampled CIR computation."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .exceptions import InvalidArgumentError
from .synth import CALIBRATED, MEASURED, Cfr, HardwareResponse

DEFAULT_OVERSAMPLING = 16


@dataclass(frozen=True, eq=False)
class Cir:
    """Oversampled channel impulse response of one subband.

    Samples sit on the centred delay grid ``t_m = m * step`` for
    ``m = -M/2 .. M/2-1`` with ``M = N * oversampling``, which spans one
    full unambiguous period ``1/subcarrier_spacing``.
    """

    index: int
    carrier: float
    bandwidth: float
    samples: np.ndarray
    step: float
    oversampling: int

    @property
    def delays(self) -> np.ndarray:
        m = self.samples.size
        return np.arange(-(m // 2), m - m // 2) * self.step

    @property
    def span(self) -> tuple[float, float]:
        m = self.samples.size
        return -(m // 2) * self.step, (m - m // 2 - 1) * self.step

    def sample_index(self, delay) -> np.ndarray:
        """Nearest dense-grid index for each delay."""
        m = self.samples.size
        idx = np.rint(np.asarray(delay, dtype=float) / self.step).astype(np.int64) + m // 2
        if np.any(idx < 0) or np.any(idx >= m):
            raise InvalidArgumentError("delay outside the CIR unambiguous span")
        return idx

    def at(self, delay) -> np.ndarray:
        return self.samples[self.sample_index(delay)]


def estimate_cfr(rx: np.ndarray, pilots: np.ndarray, template: Cfr | None = None) -> Cfr | np.ndarray:
    """Least-squares CFR estimate ``Y / X``.

    With a ``template`` the result is wrapped as a measured :class:`Cfr`
    carrying the template's subband metadata; otherwise the raw array is
    returned.
    """
    rx = np.asarray(rx, dtype=complex)
    pilots = np.asarray(pilots, dtype=complex)
    if rx.shape != pilots.shape:
        raise InvalidArgumentError("rx symbols and pilots differ in length")
    if np.any(pilots == 0):
        raise InvalidArgumentError("zero pilot symbol")
    h = rx / pilots
    if template is None:
        return h
    return replace(template, samples=h, state=MEASURED)


def calibrate(cfr: Cfr, hw: HardwareResponse) -> Cfr:
    if cfr.state != MEASURED:
        raise InvalidArgumentError("calibrate expects a measured CFR")
    resp = hw[cfr.index]
    if resp.shape != cfr.samples.shape:
        raise InvalidArgumentError("hardware response size mismatch")
    return cfr.advance(cfr.samples / resp, CALIBRATED)


def cfr_to_cir(cfr: Cfr, oversampling: int = DEFAULT_OVERSAMPLING) -> Cir:
    """Zero-padded IDFT with ``1/N`` scaling (flat unit CFR -> unit peak at 0)."""
    if int(oversampling) != oversampling or oversampling < 1:
        raise InvalidArgumentError("oversampling must be an integer >= 1")
    oversampling = int(oversampling)
    n = cfr.n_subcarriers
    m = n * oversampling
    padded = np.zeros(m, dtype=complex)
    # Subcarrier n = -N/2 .. N/2-1 goes to FFT bin n mod M.
    padded[np.arange(-n // 2, n // 2) % m] = cfr.samples
    cir = np.fft.fftshift(np.fft.ifft(padded)) * (m / n)
    step = 1.0 / (m * cfr.subcarrier_spacing)
    return Cir(cfr.index, cfr.carrier, cfr.bandwidth, cir, step, oversampling)
