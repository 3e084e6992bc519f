"""Maximum-likelihood localisation of ``K`` drones from stacked pilots.

With white Gaussian noise the likelihood reduces to the least-squares fit
``||y1 - mu(psi)||^2`` where ``psi = [theta_1..K, d_1..K, fD_1..K]``.  The fit
is done in two stages:

* a coarse grid over ``(theta, fD)`` per drone, successively on residuals,
  where the real amplitude ``sqrt(P) eta`` (hence the range) is solved in
  closed form at every node;
* a joint Levenberg-Marquardt refinement of all ``3K`` parameters using the
  analytic derivatives of the mean vector.

Both stages are vectorised over a batch of independent trials; the single
estimate entry point simply calls the batch engine with one trial.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import permutations
from typing import Sequence

import numpy as np

from .signal_model import ArrayGeometry, FrameConfig

__all__ = [
    "SearchSpec",
    "LocationEstimate",
    "SearchFailure",
    "pack",
    "unpack",
    "mean_vector",
    "refine_slots",
    "neg_log_likelihood",
    "mle_estimate",
    "mle_estimate_batch",
    "error_statistics",
]


class SearchFailure(RuntimeError):
    """Raised when the likelihood is not finite anywhere on the search grid."""


@dataclass(frozen=True)
class SearchSpec:
    """Search box and numerical controls of the estimator.

    ``doppler_step=None`` picks ``fs / (20 pi l)`` for ``l`` pilots, i.e. a
    fixed fraction of the Doppler ambiguity width at that pilot count.
    """

    theta_bounds: tuple[float, float] = (math.radians(-80.0), math.radians(80.0))
    range_bounds: tuple[float, float] = (1.0, 2000.0)
    doppler_bounds: tuple[float, float] = (-10e3, 10e3)
    theta_step: float = math.radians(0.5)
    doppler_step: float | None = None
    tolerance: float = 1e-10
    max_iterations: int = 100
    max_grid_elements: int = 4_000_000

    def __post_init__(self):
        for name in ("theta_bounds", "range_bounds", "doppler_bounds"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValueError(f"{name} must be ordered, got {(lo, hi)}")
        lo, hi = self.theta_bounds
        if lo <= -math.pi / 2 or hi >= math.pi / 2:
            raise ValueError("theta bounds must stay inside (-pi/2, pi/2)")
        if self.range_bounds[0] <= 0:
            raise ValueError("range bounds must be positive")
        if self.theta_step <= 0 or (self.doppler_step is not None and self.doppler_step <= 0):
            raise ValueError("grid steps must be positive")

    def theta_grid(self) -> np.ndarray:
        lo, hi = self.theta_bounds
        n = int(math.floor((hi - lo) / self.theta_step + 1e-9)) + 1
        return lo + self.theta_step * np.arange(n)

    def doppler_grid(self, num_pilots: int, sampling_rate: float) -> np.ndarray:
        step = self.doppler_step or sampling_rate / (20 * math.pi * num_pilots)
        lo, hi = self.doppler_bounds
        n = int(math.floor((hi - lo) / step + 1e-9)) + 1
        return lo + step * np.arange(n)

    def lower(self, k: int) -> np.ndarray:
        return np.repeat([self.theta_bounds[0], self.range_bounds[0], self.doppler_bounds[0]], k)

    def upper(self, k: int) -> np.ndarray:
        return np.repeat([self.theta_bounds[1], self.range_bounds[1], self.doppler_bounds[1]], k)


@dataclass
class LocationEstimate:
    """Estimated parameter vector plus, when the truth is known, its errors."""

    estimate: np.ndarray
    num_pilots: int
    objective: float = float("nan")
    errors: np.ndarray | None = None
    rmse: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def num_drones(self) -> int:
        return len(self.estimate) // 3

    @property
    def doa(self) -> np.ndarray:
        return self.estimate[: self.num_drones]

    @property
    def range(self) -> np.ndarray:
        k = self.num_drones
        return self.estimate[k: 2 * k]

    @property
    def doppler(self) -> np.ndarray:
        return self.estimate[2 * self.num_drones:]


def pack(doa, range_m, doppler) -> np.ndarray:
    """Flatten per-drone triples into ``[theta..., d..., fD...]``."""
    return np.concatenate([np.atleast_1d(doa), np.atleast_1d(range_m), np.atleast_1d(doppler)]).astype(float)


def unpack(psi):
    """Inverse of :func:`pack`; works on the last axis of batched arrays."""
    psi = np.asarray(psi, dtype=float)
    k = psi.shape[-1] // 3
    if psi.shape[-1] != 3 * k:
        raise ValueError("parameter vector length must be a multiple of 3")
    return psi[..., :k], psi[..., k:2 * k], psi[..., 2 * k:]


# ---------------------------------------------------------------------------
# batched model: amplitudes g = sqrt(P) * eta replace the ranges internally
# ---------------------------------------------------------------------------

def _antenna_phase_rate(geometry: ArrayGeometry) -> np.ndarray:
    # d(phase_n)/d(sin theta) for a_n = exp(-j 2 pi (n-1) d0 sin theta / lambda)
    return -2 * np.pi * geometry.spacing / geometry.wavelength * np.arange(geometry.num_antennas)


def _slot_times(num_pilots):
    """Subframe index of every stacked snapshot: ``1..l`` or an explicit array."""
    if np.ndim(num_pilots) == 0:
        return np.arange(1, int(num_pilots) + 1)
    return np.asarray(num_pilots, dtype=float)


def _components(theta, amp, fd, geometry, sampling_rate, num_pilots):
    """Per-drone pilot contributions, shape ``(B, K, l, N)``."""
    rate = _antenna_phase_rate(geometry)
    steer = np.exp(1j * np.sin(theta)[..., None] * rate)                      # (B,K,N)
    times = _slot_times(num_pilots)
    dop = np.exp(2j * np.pi * fd[..., None] * times / sampling_rate)          # (B,K,l)
    return amp[..., None, None] * dop[..., :, None] * steer[..., None, :]


def _model_and_jacobian(theta, amp, fd, geometry, sampling_rate, num_pilots):
    comp = _components(theta, amp, fd, geometry, sampling_rate, num_pilots)   # (B,K,l,N)
    mu = comp.sum(axis=1)
    rate = _antenna_phase_rate(geometry)
    times = _slot_times(num_pilots)
    d_theta = comp * (1j * np.cos(theta)[..., None, None] * rate)
    d_amp = comp / amp[..., None, None]
    d_fd = comp * (2j * np.pi * times / sampling_rate)[:, None]
    jac = np.concatenate([d_theta, d_amp, d_fd], axis=1)                      # (B,3K,l,N)
    b = jac.shape[0]
    return mu.reshape(b, -1), jac.reshape(b, jac.shape[1], -1)


def _amplitude(range_m, powers, wavelength):
    return np.sqrt(powers) * wavelength / (4 * np.pi * range_m)


def _range_from_amplitude(amp, powers, wavelength):
    return np.sqrt(powers) * wavelength / (4 * np.pi * amp)


def mean_vector(psi, geometry: ArrayGeometry, config: FrameConfig, powers, num_pilots: int) -> np.ndarray:
    """Noiseless stacked pilot vector ``mu(psi)`` of length ``N * l``."""
    if num_pilots < 1:
        raise ValueError("at least one pilot is required")
    theta, rng_m, fd = unpack(psi)
    powers = np.asarray(powers, dtype=float)
    amp = _amplitude(rng_m, powers, geometry.wavelength)
    comp = _components(theta[None], amp[None], fd[None], geometry, config.sampling_rate, num_pilots)
    return comp.sum(axis=1).reshape(-1)


def neg_log_likelihood(y1, psi, geometry: ArrayGeometry, config: FrameConfig, powers) -> float:
    """Least-squares objective ``||y1 - mu(psi)||^2`` (the ML criterion up to constants)."""
    y1 = np.asarray(y1)
    n = geometry.num_antennas
    if y1.ndim != 1 or y1.size % n:
        raise ValueError(f"y1 length {y1.size} is not a multiple of N={n}")
    r = y1 - mean_vector(psi, geometry, config, powers, y1.size // n)
    return float(np.vdot(r, r).real)


# ---------------------------------------------------------------------------
# coarse grid
# ---------------------------------------------------------------------------

def _coarse_stage(pilots, k, geometry, sampling_rate, spec: SearchSpec):
    """Successive single-drone grid search with residual subtraction.

    Returns (theta, amp, fd) arrays of shape ``(B, k)``.
    """
    b, l, n = pilots.shape
    thetas = spec.theta_grid()
    dops = spec.doppler_grid(l, sampling_rate)
    steer_c = np.conj(np.exp(1j * np.outer(_antenna_phase_rate(geometry), np.sin(thetas))))  # (N,nth)
    times = np.arange(1, l + 1)
    dop_c = np.exp(-2j * np.pi * np.outer(times, dops) / sampling_rate)                   # (l,nf)
    norm = float(n * l)
    chunk = max(1, spec.max_grid_elements // (thetas.size * dops.size))

    out_t = np.empty((b, k))
    out_a = np.empty((b, k))
    out_f = np.empty((b, k))
    residual = pilots.copy()
    for kk in range(k):
        for s in range(0, b, chunk):
            sl = slice(s, s + chunk)
            z = residual[sl] @ steer_c                                    # (c,l,nth)
            score = (np.swapaxes(z, 1, 2) @ dop_c).real                   # (c,nth,nf)
            flat = score.reshape(score.shape[0], -1)
            if not np.all(np.isfinite(flat)):
                bad = ~np.all(np.isfinite(flat), axis=1)
                flat = np.where(np.isfinite(flat), flat, -np.inf)
                flat[bad] = -np.inf
            idx = np.argmax(flat, axis=1)
            best = flat[np.arange(flat.shape[0]), idx]
            it, jf = np.unravel_index(idx, score.shape[1:])
            out_t[sl, kk] = thetas[it]
            out_f[sl, kk] = dops[jf]
            out_a[sl, kk] = np.where(np.isfinite(best), np.maximum(best, 0.0), np.nan) / norm
        comp = _components(out_t[:, kk:kk + 1], out_a[:, kk:kk + 1], out_f[:, kk:kk + 1],
                           geometry, sampling_rate, l)[:, 0]
        residual = residual - np.nan_to_num(comp)
    return out_t, out_a, out_f


# ---------------------------------------------------------------------------
# joint refinement
# ---------------------------------------------------------------------------

def _objective(y, mu):
    r = y - mu
    return np.einsum("bi,bi->b", r.conj(), r).real


def _refine(y, theta, amp, fd, geometry, sampling_rate, l, lo, hi, spec: SearchSpec):
    """Batched Levenberg-Marquardt on ``(theta, amp, fD)`` with box projection."""
    b, k = theta.shape
    x = np.concatenate([theta, amp, fd], axis=1)
    mu, jac = _model_and_jacobian(theta, amp, fd, geometry, sampling_rate, l)
    obj = _objective(y, mu)
    damping = np.full(b, 1e-3)
    active = np.isfinite(obj)
    floor = 1e-28 * np.maximum(np.einsum("bi,bi->b", y.conj(), y).real, 1e-300)
    eye = np.eye(3 * k)
    for _ in range(spec.max_iterations):
        if not active.any():
            break
        ia = np.flatnonzero(active)
        ja = jac[ia]
        r = y[ia] - mu[ia]
        normal = np.einsum("bpi,bqi->bpq", ja.conj(), ja).real
        grad = np.einsum("bpi,bi->bp", ja.conj(), r).real
        diag = np.einsum("bpp->bp", normal)
        diag = np.where(diag > 0, diag, 1.0)
        lhs = normal + damping[ia, None, None] * diag[:, :, None] * eye
        try:
            step = np.linalg.solve(lhs, grad[..., None])[..., 0]
        except np.linalg.LinAlgError:
            step = np.stack([np.linalg.lstsq(m, g, rcond=None)[0] for m, g in zip(lhs, grad)])
        cand = np.clip(x[ia] + step, lo[ia], hi[ia])
        c_mu, c_jac = _model_and_jacobian(cand[:, :k], cand[:, k:2 * k], cand[:, 2 * k:],
                                          geometry, sampling_rate, l)
        c_obj = _objective(y[ia], c_mu)
        better = np.isfinite(c_obj) & (c_obj < obj[ia])
        acc = ia[better]
        rel = (obj[acc] - c_obj[better]) / np.maximum(obj[acc], 1e-300)
        x[acc] = cand[better]
        mu[acc] = c_mu[better]
        jac[acc] = c_jac[better]
        obj[acc] = c_obj[better]
        damping[acc] = np.maximum(damping[acc] / 3, 1e-12)
        rej = ia[~better]
        damping[rej] *= 4
        done = np.zeros(b, dtype=bool)
        done[acc[rel < spec.tolerance]] = True
        done[rej[damping[rej] > 1e12]] = True
        done |= obj <= floor
        active &= ~done
    return x[:, :k], x[:, k:2 * k], x[:, 2 * k:], obj


def _assign(theta, amp, reference_theta, powers):
    """Permutation per trial mapping estimated components onto drone labels."""
    b, k = theta.shape
    if k == 1:
        return np.zeros((b, 1), dtype=int)
    perms = np.array(list(permutations(range(k))))
    if reference_theta is not None:
        ref = np.broadcast_to(reference_theta, (b, k))
        cost = np.abs(theta[:, perms] - ref[:, None, :]).sum(axis=2)        # (B,P)
    else:
        # strongest component to the strongest drone, ties resolved by angle
        order_p = np.argsort(-np.asarray(powers), kind="stable")
        key = -amp + 1e-9 * theta
        ranked = np.argsort(key, axis=1, kind="stable")
        out = np.empty((b, k), dtype=int)
        out[:, order_p] = ranked
        return out
    return perms[np.argmin(cost, axis=1)]


def mle_estimate_batch(pilots, geometry: ArrayGeometry, config: FrameConfig, powers,
                       spec: SearchSpec | None = None, reference=None, warm_start=None):
    """Estimate ``psi`` for a batch of independent pilot records.

    Parameters
    ----------
    pilots : complex array, shape ``(B, l, N)``
        Received pilots of ``B`` trials, subframes ``1..l``.
    powers : array of length K
        Known transmit powers, which also fixes ``K``.
    reference : array ``(3K,)`` or ``(B, 3K)``, optional
        Labelling hint: estimated drones are matched to the reference
        angles (typically the truth or the previous subframe estimate).
    warm_start : array ``(B, 3K)``, optional
        Extra starting point refined alongside the grid start; the lower
        objective wins.

    Returns
    -------
    psi : ``(B, 3K)`` estimates (NaN rows for failed trials)
    objective : ``(B,)`` final least-squares values
    """
    spec = spec or SearchSpec()
    pilots = np.asarray(pilots, dtype=complex)
    if pilots.ndim != 3 or pilots.shape[2] != geometry.num_antennas:
        raise ValueError("pilots must have shape (B, l, N)")
    powers = np.asarray(powers, dtype=float)
    k = powers.size
    b, l, _ = pilots.shape
    fs = config.sampling_rate
    y = pilots.reshape(b, -1)

    amp_lo = float(np.min(_amplitude(spec.range_bounds[1], powers, geometry.wavelength)))
    amp_hi = float(np.max(_amplitude(spec.range_bounds[0], powers, geometry.wavelength)))
    lo = np.repeat([spec.theta_bounds[0], amp_lo, spec.doppler_bounds[0]], k)
    hi = np.repeat([spec.theta_bounds[1], amp_hi, spec.doppler_bounds[1]], k)
    lo = np.broadcast_to(lo, (b, 3 * k))
    hi = np.broadcast_to(hi, (b, 3 * k))

    t0, a0, f0 = _coarse_stage(pilots, k, geometry, fs, spec)
    failed = ~np.all(np.isfinite(a0), axis=1)
    a0 = np.clip(np.nan_to_num(a0, nan=amp_lo), amp_lo, amp_hi)
    th, am, fd, obj = _refine(y, t0, a0, f0, geometry, fs, l, lo, hi, spec)

    if warm_start is not None:
        ws = np.broadcast_to(np.asarray(warm_start, dtype=float), (b, 3 * k))
        wt, wr, wf = unpack(ws)
        wa = np.clip(_amplitude(wr, powers, geometry.wavelength), amp_lo, amp_hi)
        th2, am2, fd2, obj2 = _refine(y, wt.copy(), wa, wf.copy(), geometry, fs, l, lo, hi, spec)
        use = np.isfinite(obj2) & (~np.isfinite(obj) | (obj2 < obj))
        th[use], am[use], fd[use], obj[use] = th2[use], am2[use], fd2[use], obj2[use]

    ref_theta = None
    if reference is not None:
        ref_theta = unpack(np.asarray(reference, dtype=float))[0]
    perm = _assign(th, am, ref_theta, powers)
    rows = np.arange(b)[:, None]
    th, am, fd = th[rows, perm], am[rows, perm], fd[rows, perm]
    rng_m = np.clip(_range_from_amplitude(am, powers, geometry.wavelength), *spec.range_bounds)
    psi = np.concatenate([th, rng_m, fd], axis=1)
    failed |= ~np.isfinite(obj)
    psi[failed] = np.nan
    obj[failed] = np.nan
    return psi, obj


def refine_slots(snapshots, slots, psi, geometry: ArrayGeometry, config: FrameConfig, powers,
                 spec: SearchSpec | None = None) -> np.ndarray:
    """Local likelihood refinement from ``psi`` over snapshots taken at arbitrary subframes.

    ``snapshots`` has shape ``(B, S, N)`` and ``slots`` gives the subframe
    index of each of the ``S`` snapshots (repeats allowed).  Returns ``(B, 3K)``.
    """
    spec = spec or SearchSpec()
    snapshots = np.asarray(snapshots, dtype=complex)
    powers = np.asarray(powers, dtype=float)
    k = powers.size
    b = snapshots.shape[0]
    psi = np.atleast_2d(np.asarray(psi, dtype=float))
    th, rng_m, fd = unpack(psi)
    amp_lo = float(np.min(_amplitude(spec.range_bounds[1], powers, geometry.wavelength)))
    amp_hi = float(np.max(_amplitude(spec.range_bounds[0], powers, geometry.wavelength)))
    lo = np.broadcast_to(np.repeat([spec.theta_bounds[0], amp_lo, spec.doppler_bounds[0]], k), (b, 3 * k))
    hi = np.broadcast_to(np.repeat([spec.theta_bounds[1], amp_hi, spec.doppler_bounds[1]], k), (b, 3 * k))
    amp = np.clip(_amplitude(rng_m, powers, geometry.wavelength), amp_lo, amp_hi)
    th, amp, fd, _ = _refine(snapshots.reshape(b, -1), th.copy(), amp, fd.copy(), geometry,
                             config.sampling_rate, np.asarray(slots), lo, hi, spec)
    rng_m = np.clip(_range_from_amplitude(amp, powers, geometry.wavelength), *spec.range_bounds)
    return np.concatenate([th, rng_m, fd], axis=1)


def mle_estimate(y1, geometry: ArrayGeometry, config: FrameConfig, powers,
                 spec: SearchSpec | None = None, truth=None, warm_start=None) -> LocationEstimate:
    """Single-record maximum-likelihood estimate; see :func:`mle_estimate_batch`."""
    y1 = np.asarray(y1, dtype=complex)
    n = geometry.num_antennas
    if y1.ndim != 1 or y1.size % n:
        raise ValueError(f"y1 length {y1.size} is not a multiple of N={n}")
    l = y1.size // n
    ws = None if warm_start is None else np.asarray(warm_start, dtype=float)[None]
    psi, obj = mle_estimate_batch(y1.reshape(1, l, n), geometry, config, powers, spec,
                                  reference=truth, warm_start=ws)
    if not np.isfinite(obj[0]):
        raise SearchFailure("likelihood is not finite anywhere on the search grid")
    est = LocationEstimate(psi[0], l, float(obj[0]))
    if truth is not None:
        est.errors = psi[0] - np.asarray(truth, dtype=float)
    return est


def error_statistics(trials: Sequence[LocationEstimate] | np.ndarray):
    """Sample mean and root-mean-square of estimation errors per parameter.

    Accepts estimates carrying ``errors`` or a ``(trials, 3K)`` error array.
    """
    if isinstance(trials, np.ndarray):
        err = np.asarray(trials, dtype=float)
    else:
        if len(trials) == 0:
            raise ValueError("no trials given")
        if any(t.errors is None for t in trials):
            raise ValueError("every trial must carry errors")
        err = np.stack([t.errors for t in trials])
    if err.ndim != 2 or err.shape[0] < 2:
        raise ValueError("at least two trials are required")
    return err.mean(axis=0), np.sqrt(np.mean(err ** 2, axis=0))
