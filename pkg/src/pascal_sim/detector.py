"""Channel reconstruction from location estimates and MPSK detection.

The data detector never sees the transmit powers: each drone's column is
rebuilt as ``eta(d) a(theta) exp(j 2 pi fD l / fs)`` from its estimate and
the drones are combined by maximal-ratio combining.  Two benchmarks share
the same decision rule: MMSE combining with the true channel, and, for a
single drone, a joint maximum-likelihood detector that refines the location
together with the data.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .localizer import LocationEstimate, SearchSpec, refine_slots, unpack
from .signal_model import ArrayGeometry, FrameConfig, mpsk_symbols, path_loss, steering_vector

__all__ = [
    "ChannelEstimate",
    "DecodedSubframe",
    "reconstruct_channel",
    "mrc_combine",
    "mpsk_detect",
    "mmse_perfect_csi_combine",
    "joint_mld_detect",
]


@dataclass
class ChannelEstimate:
    """``N x K`` reconstructed channel for one subframe."""

    matrix: np.ndarray
    subframe: int


@dataclass
class DecodedSubframe:
    """Hard decisions, one row per drone and one column per data slot."""

    indices: np.ndarray
    soft: np.ndarray

    def errors(self, truth) -> np.ndarray:
        """Per-drone count of symbol errors against the transmitted indices."""
        return np.count_nonzero(self.indices != np.asarray(truth), axis=-1)


def reconstruct_channel(estimate, geometry: ArrayGeometry, subframe_index: int,
                        config: FrameConfig) -> ChannelEstimate:
    """Channel columns rebuilt from an estimate (``LocationEstimate`` or packed vector)."""
    psi = estimate.estimate if isinstance(estimate, LocationEstimate) else np.asarray(estimate, float)
    if not 1 <= subframe_index <= config.subframes_per_frame:
        raise ValueError(f"subframe index must be in [1, {config.subframes_per_frame}]")
    theta, rng_m, fd = unpack(psi)
    if np.any(~np.isfinite(psi)):
        raise ValueError("estimate contains non-finite entries")
    rot = np.exp(2j * np.pi * fd * subframe_index / config.sampling_rate)
    cols = path_loss(geometry.wavelength, rng_m)[:, None] * rot[:, None] * steering_vector(geometry, theta)
    return ChannelEstimate(cols.T, subframe_index)


def mrc_combine(channel, y) -> np.ndarray:
    """Matched-filter outputs ``H^H y``.

    ``y`` may be one snapshot ``(N,)`` or a block ``(N, T)``; ``channel`` is a
    :class:`ChannelEstimate` or an ``N x K`` array.
    """
    h = channel.matrix if isinstance(channel, ChannelEstimate) else np.asarray(channel)
    return h.conj().T @ np.asarray(y)


def mpsk_detect(x, modulation_order: int) -> np.ndarray:
    """Nearest MPSK point by phase; ties go to the lower index.

    A zero input carries no phase and returns ``-1``, which never matches a
    transmitted index and is therefore always counted as an error.
    """
    x = np.asarray(x)
    m = modulation_order
    scaled = np.angle(x) * m / (2 * np.pi)
    # round half down so a decision boundary maps to the lower index
    idx = np.mod(np.ceil(scaled - 0.5), m).astype(np.int64)
    return np.where(x == 0, -1, idx)


def mmse_perfect_csi_combine(channel, powers, y, noise_variance: float) -> np.ndarray:
    """MMSE estimate of the symbols with the true channel ``H diag(sqrt P)``."""
    h = channel.matrix if isinstance(channel, ChannelEstimate) else np.asarray(channel)
    g = h * np.sqrt(np.asarray(powers, dtype=float))[None, :]
    gram = g.conj().T @ g + noise_variance * np.eye(g.shape[1])
    return np.linalg.solve(gram, g.conj().T @ np.asarray(y))


def joint_mld_detect(pilots, data, geometry: ArrayGeometry, config: FrameConfig, power: float,
                     initial, spec: SearchSpec | None = None, max_rounds: int = 10) -> tuple[np.ndarray, np.ndarray]:
    """Single-drone joint ML detection of location and data.

    Parameters
    ----------
    pilots : array, shape (B, l, N)
        Pilot snapshots of subframes ``1..l``.
    data : array, shape (B, N, T)
        Data snapshots of subframe ``l``.
    initial : array, shape (B, 3)
        Pilot-only estimates used as the starting point.

    Alternates exhaustive per-slot symbol decisions under the current
    channel with a likelihood refinement over pilots plus decided data
    until the decisions stop changing.  Returns ``(indices (B, T), psi (B, 3))``.
    """
    initial = np.atleast_2d(np.asarray(initial, dtype=float))
    if initial.shape[-1] != 3:
        raise NotImplementedError("joint ML detection is implemented for a single drone only")
    spec = spec or SearchSpec()
    pilots = np.asarray(pilots)
    data = np.asarray(data)
    b, l, n = pilots.shape
    m = config.modulation_order
    cand = mpsk_symbols(np.arange(m), m)
    psi = initial.copy()
    decided = None
    for _ in range(max_rounds):
        theta, rng_m, fd = psi[:, 0], psi[:, 1], psi[:, 2]
        col = (path_loss(geometry.wavelength, rng_m)[:, None] * np.sqrt(power)
               * np.exp(2j * np.pi * fd * l / config.sampling_rate)[:, None]
               * steering_vector(geometry, theta))                        # (B, N)
        # ||y - h s||^2 over unit-modulus s reduces to maximising Re(s* h^H y)
        corr = np.einsum("bn,bnt->bt", col.conj(), data)
        new = np.argmax((corr[..., None] * cand.conj()).real, axis=-1)
        if decided is not None and np.array_equal(new, decided):
            break
        decided = new
        psi = _refine_with_data(pilots, data, decided, psi, geometry, config, power, spec)
    return decided, psi


def _refine_with_data(pilots, data, decided, psi, geometry, config, power, spec):
    """Likelihood refinement treating decided data as extra pilots of subframe ``l``."""
    b, l, n = pilots.shape
    m = config.modulation_order
    # derotating by the decided symbol turns each data slot into a pilot of subframe l
    derot = data * mpsk_symbols(decided, m).conj()[:, None, :]
    extra = np.moveaxis(derot, 2, 1)                                       # (B, T, N)
    stacked = np.concatenate([pilots, extra], axis=1)
    slots = np.concatenate([np.arange(1, l + 1), np.full(extra.shape[1], l)])
    return refine_slots(stacked, slots, psi, geometry, config, np.array([power]), spec)
