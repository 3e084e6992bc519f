"""Fisher information and Cramer-Rao bounds for the per-frame estimator.

The pilot observation is Gaussian with a parameter-free covariance
``sigma^2 I``, so only the mean-derivative term of the Slepian-Bangs formula
survives: ``F_ij = (2 / sigma^2) Re(dmu_i^H dmu_j)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .localizer import _amplitude, _model_and_jacobian, unpack
from .signal_model import ArrayGeometry, FrameConfig

__all__ = ["CrlbResult", "UnidentifiableError", "mu_partials", "fisher_information", "crlb_bounds",
           "scaled_condition_number"]

CONDITION_CAP = 1e12


class UnidentifiableError(ValueError):
    """Fisher matrix too ill-conditioned to invert (e.g. two drones share theta and fD)."""

    def __init__(self, condition_number: float):
        super().__init__(f"Fisher information is singular or near-singular "
                         f"(scaled condition number {condition_number:.3e})")
        self.condition_number = condition_number


@dataclass
class CrlbResult:
    """Variance lower bounds ordered like the parameter vector (rad^2, m^2, Hz^2)."""

    variances: np.ndarray

    @property
    def num_drones(self) -> int:
        return len(self.variances) // 3

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.variances)

    def per_drone(self) -> np.ndarray:
        """``(K, 3)`` array of ``(theta, d, fD)`` variance bounds."""
        return np.stack(unpack(self.variances), axis=1)


def _jacobian_d(psi, geometry, config, powers, num_pilots):
    """``(3K, N*l)`` derivatives of ``mu`` in the (theta, d, fD) parametrisation."""
    theta, rng_m, fd = unpack(psi)
    powers = np.asarray(powers, dtype=float)
    amp = _amplitude(rng_m, powers, geometry.wavelength)
    _, jac = _model_and_jacobian(theta[None], amp[None], fd[None], geometry,
                                 config.sampling_rate, num_pilots)
    jac = jac[0]
    k = theta.size
    # d amp / d range = -amp / range
    jac[k:2 * k] *= (-amp / rng_m)[:, None]
    return jac


def mu_partials(psi, k: int, geometry: ArrayGeometry, config: FrameConfig, powers, num_pilots: int):
    """Derivatives of the stacked mean vector w.r.t. ``(theta_k, d_k, fD_k)``.

    ``k`` is 1-based.  Each returned vector has length ``N * l``.
    """
    kk = len(psi) // 3
    if not 1 <= k <= kk:
        raise ValueError(f"drone index must be in [1, {kk}]")
    jac = _jacobian_d(np.asarray(psi, dtype=float), geometry, config, powers, num_pilots)
    return jac[k - 1], jac[kk + k - 1], jac[2 * kk + k - 1]


def fisher_information(psi, geometry: ArrayGeometry, config: FrameConfig, powers, num_pilots: int,
                       noise_variance: float | None = None) -> np.ndarray:
    """Real symmetric ``3K x 3K`` Fisher information matrix."""
    var = config.noise_variance if noise_variance is None else noise_variance
    if not var > 0:
        raise ValueError("noise variance must be positive")
    jac = _jacobian_d(np.asarray(psi, dtype=float), geometry, config, powers, num_pilots)
    f = 2.0 / var * (jac.conj() @ jac.T).real
    return 0.5 * (f + f.T)


def scaled_condition_number(fisher: np.ndarray) -> float:
    """Condition number after unit-free diagonal equilibration."""
    d = np.sqrt(np.abs(np.diag(fisher)))
    if np.any(d == 0):
        return float("inf")
    return float(np.linalg.cond(fisher / np.outer(d, d)))


def crlb_bounds(fisher: np.ndarray, condition_cap: float = CONDITION_CAP) -> CrlbResult:
    """Diagonal of ``F^-1`` via a Cholesky factorisation of the equilibrated matrix."""
    fisher = np.asarray(fisher, dtype=float)
    cond = scaled_condition_number(fisher)
    if not cond < condition_cap:
        raise UnidentifiableError(cond)
    d = np.sqrt(np.diag(fisher))
    scaled = fisher / np.outer(d, d)
    try:
        factor = linalg.cho_factor(scaled)
    except linalg.LinAlgError as exc:
        raise UnidentifiableError(cond) from exc
    inv = linalg.cho_solve(factor, np.eye(len(d)))
    return CrlbResult(np.diag(inv) / d ** 2)


def crlb_for(psi, geometry, config, powers, num_pilots, noise_variance=None) -> CrlbResult:
    """Convenience wrapper: Fisher assembly followed by inversion."""
    return crlb_bounds(fisher_information(psi, geometry, config, powers, num_pilots, noise_variance))
