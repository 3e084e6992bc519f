"""Average MPSK symbol error rate of MRC with location-derived channels.

Pipeline, for target drone ``k`` in subframe ``l``:

1. conditional union bound given the location errors and the symbol
   combination of all drones,
2. Taylor expansion of ``Q`` about the zero-error operating point,
3. raw moments of the combiner output, obtained by product-to-sum expansion
   of ``nu_x1^a nu_y1^b`` and closed-form Gaussian expectations of the
   resulting complex exponentials (complex ``erf`` through the Faddeeva
   function),
4. average over all ``M^K`` symbol combinations.

Symbols used below::

    nu_x1, nu_y1        real/imag part of nu / eta(d_k + dd_k)
    theta_rate          2 pi d0 cos(theta_k) / lambda, phase slope per antenna and radian
    idx_sum             sum e_g (i_g - 1) over the factors of one term (integer)
    phase_sum           sum e_g Phi_g, zero-error phase of one term (cycles)
    sign_sum            sum e_g, so the Doppler error enters as -l sign_sum dfd / fs
    x0                  zero-error Q argument of each union-bound term

The product-to-sum expansion groups every term by ``(idx_sum, sign_sum)``;
this is exact, and the literal term-by-term stream is kept in
:mod:`pascal_sim.kernels` for cross-checking.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special
from scipy.signal import convolve2d

from .signal_model import ArrayGeometry, DroneState, FrameConfig, path_loss

__all__ = [
    "ScenarioSpec",
    "ErrorModel",
    "TaylorSpec",
    "DegenerateInputError",
    "q_function",
    "q_derivative",
    "conditional_ser",
    "conditional_ser_avg",
    "gaussian_trig_integral",
    "gaussian_char",
    "trig_expectation",
    "moment_E67",
    "average_ser_mpsk",
    "average_ser_numeric_oracle",
    "frame_average_ser",
    "symbol_combos",
]

COMBO_CAP = 4096
TERM_CAP = 10 ** 9
MAX_TAYLOR_ORDER = 12


class DegenerateInputError(ValueError):
    """Combiner mean is exactly zero, so the decision geometry is undefined."""


@dataclass(frozen=True)
class ScenarioSpec:
    """Geometry, drones and frame setup seen by target drone ``target`` (1-based)."""

    geometry: ArrayGeometry
    drones: tuple[DroneState, ...]
    config: FrameConfig
    target: int = 1
    subframe: int = 1

    def __post_init__(self):
        object.__setattr__(self, "drones", tuple(self.drones))
        if not 1 <= self.target <= len(self.drones):
            raise ValueError(f"target must be in [1, {len(self.drones)}]")
        if self.subframe < 1:
            raise ValueError("subframe index is 1-based")
        self.config.check_aliasing(self.drones)

    @property
    def num_drones(self) -> int:
        return len(self.drones)

    def with_target(self, target: int) -> "ScenarioSpec":
        return ScenarioSpec(self.geometry, self.drones, self.config, target, self.subframe)

    def with_subframe(self, subframe: int) -> "ScenarioSpec":
        return ScenarioSpec(self.geometry, self.drones, self.config, self.target, subframe)


@dataclass(frozen=True)
class ErrorModel:
    """Independent zero-mean Gaussian errors for the target drone.

    Expectations use the Gaussian density integrated over ``theta_limits`` and
    ``fd_limits`` without renormalisation. ``fd_limits=None`` means
    ``+-fd_span * sigma_fd``.
    """

    sigma_theta: float
    sigma_fd: float
    sigma_d: float = 0.0
    fd_limits: tuple[float, float] | None = None
    theta_limits: tuple[float, float] = (-math.pi, math.pi)
    fd_span: float = 6.0

    def __post_init__(self):
        if min(self.sigma_theta, self.sigma_fd, self.sigma_d) < 0:
            raise ValueError("standard deviations must be non-negative")
        if self.fd_limits is not None and not self.fd_limits[0] < self.fd_limits[1]:
            raise ValueError("fd_limits must be ordered")

    @property
    def fd_bounds(self) -> tuple[float, float]:
        if self.fd_limits is not None:
            return self.fd_limits
        if self.sigma_fd == 0:
            # point mass: any limits straddling zero carry the full mass
            return (-math.inf, math.inf)
        half = self.fd_span * self.sigma_fd
        return (-half, half)


@dataclass(frozen=True)
class TaylorSpec:
    order: int = 6

    def __post_init__(self):
        if not 0 <= self.order <= MAX_TAYLOR_ORDER:
            raise ValueError(f"Taylor order must be in [0, {MAX_TAYLOR_ORDER}]")


# ---------------------------------------------------------------------------
# Q function and its derivatives
# ---------------------------------------------------------------------------

def q_function(x):
    """Gaussian tail probability ``Q(x) = P(Z > x)``."""
    out = 0.5 * special.erfc(np.asarray(x, dtype=float) / math.sqrt(2))
    return float(out) if np.ndim(out) == 0 else out


def q_derivative(order: int, x0):
    """``r``-th derivative of ``Q`` at ``x0`` through physicists' Hermite polynomials.

    ``Q^(r)(x0) = -(sqrt 2)^-r pi^-1/2 exp(-x0^2/2) (-1)^(r+1) H_{r-1}(x0/sqrt 2)``
    """
    if order < 0:
        raise ValueError("derivative order must be non-negative")
    if order == 0:
        return q_function(x0)
    x0 = np.asarray(x0, dtype=float)
    out = (-(1.0 / (math.sqrt(2) ** order * math.sqrt(math.pi))) * np.exp(-x0 ** 2 / 2)
           * (-1) ** (order + 1) * special.eval_hermite(order - 1, x0 / math.sqrt(2)))
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# conditional SER
# ---------------------------------------------------------------------------

def symbol_combos(num_drones: int, modulation_order: int):
    return itertools.product(range(modulation_order), repeat=num_drones)


def _check_combo(scenario: ScenarioSpec, combo) -> np.ndarray:
    combo = np.asarray(combo, dtype=int)
    m = scenario.config.modulation_order
    if combo.shape != (scenario.num_drones,) or np.any((combo < 0) | (combo >= m)):
        raise ValueError(f"combo must hold one index in [0, {m}) per drone")
    return combo


def _term_table(scenario: ScenarioSpec, combo):
    """Weights ``eta_p sqrt(P_p)`` and zero-error phases (cycles) of every (p, i) term.

    Phases are taken relative to the target's own symbol, so the decision
    wedge of the transmitted point is centred on the positive real axis.
    """
    geo, cfg = scenario.geometry, scenario.config
    k = scenario.target - 1
    tk = scenario.drones[k]
    ratio = geo.spacing / geo.wavelength
    i = np.arange(geo.num_antennas)
    weights = np.array([path_loss(geo.wavelength, d.range) * math.sqrt(d.tx_power)
                        for d in scenario.drones])
    phases = np.empty((scenario.num_drones, geo.num_antennas))
    for p, d in enumerate(scenario.drones):
        phases[p] = (i * ratio * (math.sin(tk.doa) - math.sin(d.doa))
                     + (combo[p] - combo[k]) / cfg.modulation_order
                     + (d.doppler - tk.doppler) * scenario.subframe / cfg.sampling_rate)
    theta_rate = 2 * math.pi * ratio * math.cos(tk.doa)
    return weights, phases, theta_rate


def _nu1(scenario: ScenarioSpec, combo, d_theta, d_fd, linearize: bool):
    """``nu / eta(d_k + dd_k)`` for arrays of errors (broadcast)."""
    geo, cfg = scenario.geometry, scenario.config
    k = scenario.target - 1
    tk = scenario.drones[k]
    ratio = geo.spacing / geo.wavelength
    d_theta = np.asarray(d_theta, dtype=float)
    d_fd = np.asarray(d_fd, dtype=float)
    if linearize:
        sin_hat = math.sin(tk.doa) + d_theta * math.cos(tk.doa)
    else:
        sin_hat = np.sin(tk.doa + d_theta)
    i = np.arange(geo.num_antennas)
    total = 0.0
    for p, d in enumerate(scenario.drones):
        w = path_loss(geo.wavelength, d.range) * math.sqrt(d.tx_power)
        base = ((combo[p] - combo[k]) / cfg.modulation_order
                + (d.doppler - tk.doppler - d_fd) * scenario.subframe / cfg.sampling_rate)
        spatial = np.multiply.outer(sin_hat - math.sin(d.doa), i * ratio)
        total = total + w * np.exp(2j * np.pi * (spatial + base[..., None])).sum(axis=-1)
    return total


def _ser_from_nu1(nu1, scenario: ScenarioSpec):
    m = scenario.config.modulation_order
    s, c = math.sin(math.pi / m), math.cos(math.pi / m)
    d1 = s * nu1.real - c * nu1.imag
    d2 = s * nu1.real + c * nu1.imag
    var = scenario.config.noise_variance
    if var == 0:
        # noiseless limit: Q(+inf) = 0, Q(-inf) = 1, Q(0) = 1/2
        return (0.5 * (1 - np.sign(d1))) + (0.5 * (1 - np.sign(d2)))
    scale = math.sqrt(2.0 / (scenario.geometry.num_antennas * var))
    return q_function(scale * d1) + q_function(scale * d2)


def _cancel_tol(scenario: ScenarioSpec) -> float:
    """Magnitude below which a sum of ``K N`` unit-phase terms is treated as zero."""
    geo = scenario.geometry
    total = sum(path_loss(geo.wavelength, d.range) * math.sqrt(d.tx_power) for d in scenario.drones)
    return 1e-12 * geo.num_antennas * total


def conditional_ser(scenario: ScenarioSpec, combo, delta) -> float:
    """Union-bound SER of the target given errors ``(d_theta, d_range, d_fd)``.

    The range error only scales the combiner output and the noise alike,
    so it is accepted but never used.
    """
    combo = _check_combo(scenario, combo)
    d_theta, _d_range, d_fd = delta
    nu1 = complex(_nu1(scenario, combo, d_theta, d_fd, linearize=False))
    if abs(nu1) <= _cancel_tol(scenario):
        raise DegenerateInputError("combiner mean is zero; decision regions undefined")
    return float(_ser_from_nu1(nu1, scenario))


def conditional_ser_avg(scenario: ScenarioSpec, delta, combo_cap: int = COMBO_CAP) -> float:
    """Conditional SER averaged over all ``M^K`` symbol combinations."""
    m, k = scenario.config.modulation_order, scenario.num_drones
    if m ** k > combo_cap:
        raise ValueError(f"M^K = {m ** k} exceeds the combination cap {combo_cap}")
    vals = [conditional_ser(scenario, c, delta) for c in symbol_combos(k, m)]
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# Gaussian integrals of complex exponentials
# ---------------------------------------------------------------------------

def _scaled_erf(a, y):
    """``exp(-y^2) erf(a - j y)`` without overflow, via the Faddeeva function."""
    a = np.asarray(a, dtype=float)
    y = np.asarray(y, dtype=float)
    a, y = np.broadcast_arrays(a, y)
    out = np.empty(a.shape, dtype=complex)
    inf = np.isinf(a)
    out[inf] = np.sign(a[inf]) * np.exp(-y[inf] ** 2)
    fin = ~inf
    af, yf = a[fin], y[fin]
    pos = af >= 0
    tail = np.exp(-af ** 2 + 2j * af * yf)
    w = np.where(pos, special.wofz(yf + 1j * af), special.wofz(-yf - 1j * af))
    out[fin] = np.where(pos, np.exp(-yf ** 2) - tail * w, -np.exp(-yf ** 2) + tail * w)
    return out


def _erf_span(a_lo, a_hi, y):
    """``exp(-y^2) [erf(a_hi - j y) - erf(a_lo - j y)]`` with same-sign cancellation removed."""
    a_lo, a_hi, y = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (a_lo, a_hi, y)))
    shape = a_lo.shape
    a_lo, a_hi, y = a_lo.ravel(), a_hi.ravel(), y.ravel()
    out = _scaled_erf(a_hi, y) - _scaled_erf(a_lo, y)
    both_pos = np.isfinite(a_lo) & np.isfinite(a_hi) & (a_lo >= 0)
    both_neg = np.isfinite(a_lo) & np.isfinite(a_hi) & (a_hi < 0)
    if both_pos.any():
        lo, hi, yy = a_lo[both_pos], a_hi[both_pos], y[both_pos]
        out[both_pos] = (np.exp(-lo ** 2 + 2j * lo * yy) * special.wofz(yy + 1j * lo)
                         - np.exp(-hi ** 2 + 2j * hi * yy) * special.wofz(yy + 1j * hi))
    if both_neg.any():
        lo, hi, yy = a_lo[both_neg], a_hi[both_neg], y[both_neg]
        out[both_neg] = (np.exp(-hi ** 2 + 2j * hi * yy) * special.wofz(-yy - 1j * hi)
                         - np.exp(-lo ** 2 + 2j * lo * yy) * special.wofz(-yy - 1j * lo))
    return out.reshape(shape)


def gaussian_trig_integral(c, sigma: float, limits: tuple[float, float]):
    """Closed form of ``int_lo^hi exp(j c x - x^2 / (2 sigma^2)) dx``.

    Equals ``sqrt(2 pi sigma^2)/2 exp(-c^2 sigma^2/2) [erf(u_hi) - erf(u_lo)]``
    with ``u = (sqrt 2 x - j sqrt 2 c sigma^2) / (2 sigma)``.  ``c`` may be an
    array; ``sigma = 0`` returns the exact limit ``0``.
    """
    lo, hi = limits
    if not lo <= hi:
        raise ValueError("limits must be ordered")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    c = np.asarray(c, dtype=float)
    if sigma == 0:
        out = np.zeros(c.shape, dtype=complex)
    else:
        s2 = math.sqrt(2) * sigma
        out = math.sqrt(2 * math.pi) * sigma / 2 * _erf_span(lo / s2, hi / s2, c * sigma / math.sqrt(2))
    return complex(out) if out.ndim == 0 else out


def gaussian_char(c, sigma: float, limits: tuple[float, float]):
    """``E[exp(j c X) 1{lo<X<hi}]`` for ``X ~ N(0, sigma^2)``; point mass when ``sigma == 0``."""
    c = np.asarray(c, dtype=float)
    if sigma == 0:
        lo, hi = limits
        mass = 1.0 if lo < 0 < hi else (0.5 if (lo == 0) != (hi == 0) else 0.0)
        out = np.full(c.shape, mass, dtype=complex)
    else:
        out = np.asarray(gaussian_trig_integral(c, sigma, limits)) / (math.sqrt(2 * math.pi) * sigma)
    return complex(out) if out.ndim == 0 else out


def trig_expectation(kind: str, theta_coef, phase, fd_coef, error_model: ErrorModel):
    """``E[cos|sin(theta_coef dtheta + 2 pi phase + 2 pi fd_coef dfd)]``.

    The inner integral over ``dtheta`` and the outer one over ``dfd`` are
    each one closed-form Gaussian integral of a complex exponential; Euler's
    formula recombines them.
    """
    if kind not in ("cos", "sin"):
        raise ValueError("kind must be 'cos' or 'sin'")
    em = error_model
    st, sf = em.sigma_theta, em.sigma_fd
    theta_coef = np.asarray(theta_coef, dtype=float)
    fd_coef = np.asarray(fd_coef, dtype=float)
    rot = np.exp(2j * np.pi * np.asarray(phase, dtype=float))
    if st > 0 and sf > 0:
        norm = 1.0 / (2 * math.pi * st * sf)
        i_pos = gaussian_trig_integral(theta_coef, st, em.theta_limits)
        i_neg = gaussian_trig_integral(-theta_coef, st, em.theta_limits)
        f_pos = gaussian_trig_integral(2 * np.pi * fd_coef, sf, em.fd_bounds)
        f_neg = gaussian_trig_integral(-2 * np.pi * fd_coef, sf, em.fd_bounds)
        if kind == "cos":
            val = norm * 0.5 * (rot * i_pos * f_pos + np.conj(rot) * i_neg * f_neg)
        else:
            val = norm / 2j * (rot * i_pos * f_pos - np.conj(rot) * i_neg * f_neg)
    else:
        z = (rot * gaussian_char(theta_coef, st, em.theta_limits)
             * gaussian_char(2 * np.pi * fd_coef, sf, em.fd_bounds))
        val = z if kind == "cos" else -1j * z
    val = np.real(val)
    return float(val) if np.ndim(val) == 0 else val


# ---------------------------------------------------------------------------
# moments of the combiner output
# ---------------------------------------------------------------------------

class _MomentEngine:
    """Raw moments ``E[nu_x1^a nu_y1^b]`` for one (scenario, combo, error model).

    ``nu_x1 + j nu_y1 = z2 * sum_i W_i z1^(i-1)`` with ``z1 = exp(j theta_rate dtheta)``
    and ``z2 = exp(-j 2 pi l dfd / fs)``; every power is a Laurent polynomial
    in ``(z1, z2)`` whose monomials have closed-form expectations.
    """

    def __init__(self, scenario: ScenarioSpec, combo, error_model: ErrorModel, max_order: int):
        weights, phases, theta_rate = _term_table(scenario, combo)
        self.n = scenario.geometry.num_antennas
        self.max_order = max_order
        w = (weights[:, None] * np.exp(2j * np.pi * phases)).sum(axis=0)      # W_i
        n = self.n
        z = np.zeros((2 * n - 1, 3), dtype=complex)    # rows: z1 power -(n-1)..n-1, cols: z2 -1..1
        z[n - 1:, 2] = w
        zc = np.zeros_like(z)
        zc[:n, 0] = np.conj(w[::-1])
        self.nu_x = (z + zc) / 2
        self.nu_y = (z - zc) / 2j
        self._x_pows = self._powers(self.nu_x)
        self._y_pows = self._powers(self.nu_y)
        a = np.arange(-max_order * (n - 1), max_order * (n - 1) + 1)
        b = np.arange(-max_order, max_order + 1)
        fs, l = scenario.config.sampling_rate, scenario.subframe
        self.char_theta = gaussian_char(a * theta_rate, error_model.sigma_theta, error_model.theta_limits)
        self.char_fd = gaussian_char(-2 * np.pi * l * b / fs, error_model.sigma_fd, error_model.fd_bounds)
        self._cache: dict[tuple[int, int], float] = {}

    def _powers(self, poly):
        out = [np.ones((1, 1), dtype=complex)]
        for _ in range(self.max_order):
            out.append(convolve2d(out[-1], poly))
        return out

    def expect(self, poly) -> float:
        ra, rb = (poly.shape[0] - 1) // 2, (poly.shape[1] - 1) // 2
        ca = self.char_theta[self.max_order * (self.n - 1) - ra: self.max_order * (self.n - 1) + ra + 1]
        cb = self.char_fd[self.max_order - rb: self.max_order + rb + 1]
        return float((ca @ poly @ cb).real)

    def moment(self, nx: int, ny: int) -> float:
        key = (nx, ny)
        if key not in self._cache:
            if nx + ny > self.max_order:
                raise ValueError("moment order exceeds the engine's maximum")
            poly = convolve2d(self._x_pows[nx], self._y_pows[ny])
            self._cache[key] = self.expect(poly)
        return self._cache[key]


def moment_E67(scenario: ScenarioSpec, q1: int, q2: int, combo, error_model: ErrorModel,
               engine: str = "spectral", term_cap: int = TERM_CAP) -> float:
    """``E[nu_x1^q2 nu_y1^(q1-q2)]`` under the (linearised) error model.

    ``engine="odometer"`` streams every ``(p_g, i_g, e_g)`` term of the
    product-to-sum expansion through the compiled kernel (or its pure-Python
    fallback); ``"spectral"`` groups identical exponents first.
    """
    if not 0 <= q2 <= q1:
        raise ValueError("need 0 <= q2 <= q1")
    combo = _check_combo(scenario, combo)
    if q1 == 0:
        return 1.0
    if engine == "spectral":
        return _MomentEngine(scenario, combo, error_model, q1).moment(q2, q1 - q2)
    if engine != "odometer":
        raise ValueError("engine must be 'spectral' or 'odometer'")
    kn = scenario.num_drones * scenario.geometry.num_antennas
    if (2 * kn) ** q1 > term_cap:
        raise ValueError(f"(2KN)^q1 = {(2 * kn) ** q1} terms exceed the cap {term_cap}; "
                         "lower the Taylor order")
    from . import kernels
    weights, phases, theta_rate = _term_table(scenario, combo)
    n = scenario.geometry.num_antennas
    a = np.arange(-q1 * (n - 1), q1 * (n - 1) + 1)
    b = np.arange(-q1, q1 + 1)
    fs, l = scenario.config.sampling_rate, scenario.subframe
    ct = gaussian_char(a * theta_rate, error_model.sigma_theta, error_model.theta_limits)
    cf = gaussian_char(-2 * np.pi * l * b / fs, error_model.sigma_fd, error_model.fd_bounds)
    return kernels.odometer_moment(q1, q2, weights, phases, ct, cf)


# ---------------------------------------------------------------------------
# average SER
# ---------------------------------------------------------------------------

def _expected_q(x0: float, scale: float, centered: Sequence[float]) -> float:
    """``sum_r Q^(r)(x0) scale^r E[(v - v0)^r] / r!``."""
    total = 0.0
    for r, m in enumerate(centered):
        total += q_derivative(r, x0) * scale ** r * m / math.factorial(r)
    return total


def _combo_ser(scenario: ScenarioSpec, combo, error_model: ErrorModel, order: int) -> float:
    eng = _MomentEngine(scenario, combo, error_model, order)
    m = scenario.config.modulation_order
    s, c = math.sin(math.pi / m), math.cos(math.pi / m)
    scale = math.sqrt(2.0 / (scenario.geometry.num_antennas * scenario.config.noise_variance))
    w = eng.nu_x[scenario.geometry.num_antennas - 1:, 2] * 2     # W_i
    nu0 = complex(w.sum())
    tol = _cancel_tol(scenario)
    # components that cancel to rounding level count as exact zeros
    nx0 = nu0.real if abs(nu0.real) > tol else 0.0
    ny0 = nu0.imag if abs(nu0.imag) > tol else 0.0
    if nx0 == 0 and ny0 == 0:
        raise DegenerateInputError("zero-error combiner mean vanishes")
    total = 0.0
    for ell in (1, 2):
        sgn = (-1) ** ell
        if nx0 != 0:
            v0 = s * nx0 + sgn * c * ny0
            raw = []
            for q1 in range(order + 1):
                raw.append(sum(math.comb(q1, q2) * s ** q2 * (sgn * c) ** (q1 - q2) * eng.moment(q2, q1 - q2)
                               for q2 in range(q1 + 1)))
            coef = scale
        else:
            c1 = sgn * c
            v0 = ny0
            raw = [eng.moment(0, q1) for q1 in range(order + 1)]
            coef = scale * c1
        centered = [sum(math.comb(r, q1) * (-v0) ** (r - q1) * raw[q1] for q1 in range(r + 1))
                    for r in range(order + 1)]
        total += _expected_q(coef * v0, coef, centered)
    return total


def average_ser_mpsk(scenario: ScenarioSpec, error_model: ErrorModel, taylor: TaylorSpec | int = 6,
                     combo_cap: int = COMBO_CAP) -> float:
    """Closed-form average SER of the target drone in ``scenario.subframe``.

    The range error never enters: it scales the combiner output and its
    noise identically.
    """
    order = taylor.order if isinstance(taylor, TaylorSpec) else TaylorSpec(int(taylor)).order
    m, k = scenario.config.modulation_order, scenario.num_drones
    if m ** k > combo_cap:
        raise ValueError(f"M^K = {m ** k} exceeds the combination cap {combo_cap}")
    if scenario.config.noise_variance == 0:
        if error_model.sigma_theta or error_model.sigma_fd:
            raise ValueError("the Taylor expansion needs positive noise variance")
        return conditional_ser_avg(scenario, (0.0, 0.0, 0.0), combo_cap)
    vals = [_combo_ser(scenario, np.array(cmb), error_model, order) for cmb in symbol_combos(k, m)]
    return float(math.fsum(vals) / len(vals))


def frame_average_ser(scenario: ScenarioSpec, error_models: Sequence[ErrorModel],
                      taylor: TaylorSpec | int = 6) -> float:
    """Mean of :func:`average_ser_mpsk` over subframes ``1..L`` (one error model each)."""
    vals = [average_ser_mpsk(scenario.with_subframe(l), em, taylor)
            for l, em in enumerate(error_models, start=1)]
    return float(math.fsum(vals) / len(vals))


# ---------------------------------------------------------------------------
# Taylor-free reference by quadrature
# ---------------------------------------------------------------------------

def _gl_nodes(lo, hi, n):
    x, w = np.polynomial.legendre.leggauss(n)
    half = (hi - lo) / 2
    return lo + half * (x + 1), half * w


def _axis_nodes(sigma, limits, n, span=12.0):
    lo, hi = limits
    lo, hi = max(lo, -span * sigma), min(hi, span * sigma)
    if not lo < hi:
        return np.zeros(0), np.zeros(0)
    x, w = _gl_nodes(lo, hi, n)
    dens = np.exp(-0.5 * (x / sigma) ** 2) / (math.sqrt(2 * math.pi) * sigma)
    return x, w * dens


def average_ser_numeric_oracle(scenario: ScenarioSpec, error_model: ErrorModel, tol: float = 1e-11,
                               linearize: bool = True, start_nodes: int = 24, max_nodes: int = 1536,
                               combo_cap: int = COMBO_CAP) -> float:
    """Average SER by tensor Gauss-Legendre quadrature over ``(dtheta, dfd)``.

    The node count doubles until two successive values differ by less than
    ``tol``; the integrand is the exact union bound (no Taylor expansion).
    ``linearize`` applies the same first-order angle model as the closed form.
    """
    m, k = scenario.config.modulation_order, scenario.num_drones
    if m ** k > combo_cap:
        raise ValueError(f"M^K = {m ** k} exceeds the combination cap {combo_cap}")
    combos = [np.array(c) for c in symbol_combos(k, m)]
    em = error_model
    st, sf = em.sigma_theta, em.sigma_fd

    def evaluate(n):
        if st > 0:
            xt, wt = _axis_nodes(st, em.theta_limits, n)
        else:
            xt, wt = np.zeros(1), np.array([gaussian_char(0.0, 0.0, em.theta_limits).real])
        if sf > 0:
            xf, wf = _axis_nodes(sf, em.fd_bounds, n)
        else:
            xf, wf = np.zeros(1), np.array([gaussian_char(0.0, 0.0, em.fd_bounds).real])
        gt, gf = np.meshgrid(xt, xf, indexing="ij")
        weight = np.outer(wt, wf)
        acc = 0.0
        for c in combos:
            nu1 = _nu1(scenario, c, gt, gf, linearize)
            acc += float(np.sum(weight * _ser_from_nu1(nu1, scenario)))
        return acc / len(combos)

    if st == 0 and sf == 0:
        return evaluate(1)
    n = start_nodes
    prev = evaluate(n)
    while n < max_nodes:
        n *= 2
        cur = evaluate(n)
        if abs(cur - prev) < tol:
            return cur
        prev = cur
    raise RuntimeError(f"quadrature did not converge to {tol} with {max_nodes} nodes per axis")
