"""Line-of-sight MU-SIMO uplink model for drones observed by a ULA.

A drone ``k`` contributes ``sqrt(P_k) * eta_k * exp(j 2 pi fD_k l / fs) * a(theta_k)``
to every antenna snapshot of subframe ``l``; the pilot symbol is ``1`` and data
symbols are unit-modulus MPSK points.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "ArrayGeometry",
    "DroneState",
    "FrameConfig",
    "SignalBlock",
    "steering_vector",
    "path_loss",
    "channel_column",
    "channel_matrix",
    "mpsk_symbols",
    "synth_received",
    "stack_pilots",
    "power_for_snr",
    "snr_db_of",
    "complex_noise",
]


@dataclass(frozen=True)
class ArrayGeometry:
    """Half-wavelength uniform linear array.

    Parameters
    ----------
    num_antennas : int
        Number of receive antennas ``N``.
    wavelength : float
        Carrier wavelength in meters.
    """

    num_antennas: int
    wavelength: float

    def __post_init__(self):
        if int(self.num_antennas) != self.num_antennas or self.num_antennas < 1:
            raise ValueError(f"num_antennas must be a positive integer, got {self.num_antennas}")
        if not self.wavelength > 0:
            raise ValueError(f"wavelength must be positive, got {self.wavelength}")

    @property
    def spacing(self) -> float:
        return self.wavelength / 2

    def steering(self, doa) -> np.ndarray:
        return steering_vector(self, doa)


@dataclass(frozen=True)
class DroneState:
    """Ground truth of one drone inside a frame (angles in radians)."""

    doa: float
    range: float
    doppler: float
    tx_power: float
    velocity: float = 0.0

    def __post_init__(self):
        if not -math.pi / 2 < self.doa < math.pi / 2:
            raise ValueError(f"doa must lie in (-pi/2, pi/2), got {self.doa}")
        if not self.range > 0:
            raise ValueError(f"range must be positive, got {self.range}")
        if not self.tx_power > 0:
            raise ValueError(f"tx_power must be positive, got {self.tx_power}")


@dataclass(frozen=True)
class FrameConfig:
    """Frame layout: ``L`` subframes, each one pilot followed by ``T`` data slots."""

    num_frames: int = 1
    subframes_per_frame: int = 5
    symbols_per_subframe: int = 100
    sampling_rate: float = 100e3
    modulation_order: int = 8
    noise_variance: float = 1.0

    def __post_init__(self):
        if self.num_frames < 1 or self.subframes_per_frame < 1 or self.symbols_per_subframe < 1:
            raise ValueError("frame, subframe and symbol counts must be >= 1")
        m = self.modulation_order
        if m < 2 or m & (m - 1):
            raise ValueError(f"modulation_order must be a power of two >= 2, got {m}")
        if not self.sampling_rate > 0:
            raise ValueError("sampling_rate must be positive")
        if not self.noise_variance >= 0:
            raise ValueError("noise_variance must be non-negative")

    def check_aliasing(self, drones: Sequence[DroneState]) -> None:
        fmax = max(abs(d.doppler) for d in drones)
        if not self.sampling_rate > 2 * fmax:
            raise ValueError(
                f"sampling_rate {self.sampling_rate} Hz does not exceed 2*max|fD| = {2 * fmax} Hz")


@dataclass
class SignalBlock:
    """Antenna snapshots; ``samples`` has one row per antenna."""

    samples: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def num_antennas(self) -> int:
        return self.samples.shape[0]


def steering_vector(geometry: ArrayGeometry, doa) -> np.ndarray:
    """Steering vector ``a_n = exp(-j 2 pi (n-1) d0 sin(doa) / lambda)``.

    A vector ``doa`` returns a ``(len(doa), N)`` matrix, one row per angle.
    """
    doa = np.asarray(doa, dtype=float)
    if np.any(np.abs(doa) >= np.pi / 2):
        raise ValueError("doa must lie strictly inside (-pi/2, pi/2)")
    n = np.arange(geometry.num_antennas)
    phase = -2 * np.pi * geometry.spacing / geometry.wavelength * np.multiply.outer(np.sin(doa), n)
    return np.exp(1j * phase)


def path_loss(wavelength: float, range_m):
    """Free-space amplitude gain ``lambda / (4 pi d)``."""
    r = np.asarray(range_m, dtype=float)
    if np.any(r <= 0):
        raise ValueError("range must be positive")
    out = wavelength / (4 * np.pi * r)
    return float(out) if out.ndim == 0 else out


def _doppler_phase(doppler, subframe, sampling_rate):
    return np.exp(2j * np.pi * np.asarray(doppler) * subframe / sampling_rate)


def channel_column(geometry: ArrayGeometry, drone: DroneState, subframe_index: int,
                   config: FrameConfig) -> np.ndarray:
    """Channel of one drone in subframe ``l`` (without the ``sqrt(P)`` factor)."""
    if not 1 <= subframe_index <= config.subframes_per_frame:
        raise ValueError(f"subframe index must be in [1, {config.subframes_per_frame}]")
    eta = path_loss(geometry.wavelength, drone.range)
    return eta * _doppler_phase(drone.doppler, subframe_index, config.sampling_rate) \
        * steering_vector(geometry, drone.doa)


def channel_matrix(geometry: ArrayGeometry, drones: Sequence[DroneState], subframe_index: int,
                   config: FrameConfig) -> np.ndarray:
    """``N x K`` matrix whose columns are :func:`channel_column` for each drone."""
    return np.stack([channel_column(geometry, d, subframe_index, config) for d in drones], axis=1)


def mpsk_symbols(indices, modulation_order: int) -> np.ndarray:
    """Unit-modulus MPSK points ``exp(j 2 pi m / M)`` for integer indices ``m``."""
    return np.exp(2j * np.pi * np.asarray(indices) / modulation_order)


def complex_noise(rng: np.random.Generator, shape, variance: float) -> np.ndarray:
    """Circular complex Gaussian samples with total variance ``variance``."""
    scale = math.sqrt(variance / 2)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def synth_received(geometry: ArrayGeometry, drones: Sequence[DroneState], symbols,
                   slot: tuple[int, int], config: FrameConfig,
                   rng: np.random.Generator | None) -> SignalBlock:
    """One received snapshot ``y_{t,l} = A w(l) s_{t,l} + n``.

    Parameters
    ----------
    symbols : sequence of int
        MPSK index per drone. Ignored for the pilot slot ``t == 0``.
    slot : (t, l)
        Slot inside the subframe (0 is the pilot) and 1-based subframe index.
    rng : Generator or None
        Noise source; ``None`` only allowed for a noiseless configuration.
    """
    if len(drones) == 0:
        raise ValueError("at least one drone is required")
    t, l = slot
    m = config.modulation_order
    if t == 0:
        s = np.ones(len(drones), dtype=complex)
    else:
        idx = np.asarray(symbols)
        if idx.shape != (len(drones),):
            raise ValueError("one symbol index per drone is required")
        if np.any((idx < 0) | (idx >= m)):
            raise ValueError(f"symbol indices must lie in [0, {m})")
        s = mpsk_symbols(idx, m)
    amp = np.sqrt([d.tx_power for d in drones])
    y = channel_matrix(geometry, drones, l, config) @ (amp * s)
    if config.noise_variance > 0:
        if rng is None:
            raise ValueError("an rng is required when noise_variance > 0")
        y = y + complex_noise(rng, geometry.num_antennas, config.noise_variance)
    return SignalBlock(y[:, None], {"slot": t, "subframe": l})


def stack_pilots(blocks: Sequence[SignalBlock]) -> np.ndarray:
    """Concatenate pilot snapshots (subframe order) into one ``N*l`` vector."""
    if not blocks:
        raise ValueError("no pilot blocks given")
    n = blocks[0].num_antennas
    if any(b.num_antennas != n for b in blocks):
        raise ValueError("pilot blocks have mismatched antenna counts")
    return np.concatenate([np.ravel(b.samples) for b in blocks])


def power_for_snr(snr_db: float, wavelength: float, range_m: float, noise_variance: float = 1.0) -> float:
    """Transmit power giving per-antenna received SNR ``P eta^2 / sigma^2``."""
    eta = path_loss(wavelength, range_m)
    return 10 ** (snr_db / 10) * noise_variance / eta ** 2


def snr_db_of(drone: DroneState, wavelength: float, noise_variance: float) -> float:
    eta = path_loss(wavelength, drone.range)
    return 10 * math.log10(drone.tx_power * eta ** 2 / noise_variance)
