"""Oracle-agreement checks run by ``pascal-sim validate``.

Each check recomputes a quantity by an independent route (adaptive
quadrature, finite differences or a textbook formula) and reports the
worst disagreement against its tolerance.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .crlb import mu_partials
from .localizer import mean_vector, pack
from .ser_analytic import (ErrorModel, ScenarioSpec, conditional_ser, gaussian_trig_integral, moment_E67,
                           q_function)
from .signal_model import ArrayGeometry, DroneState, FrameConfig, power_for_snr


@dataclass
class CheckResult:
    name: str
    worst: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.worst <= self.tolerance)

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: worst {self.worst:.3e} (tol {self.tolerance:.0e})"


def reference_scenario(snr_db: float = 9.0, num_antennas: int = 6) -> tuple[ArrayGeometry, tuple, FrameConfig]:
    lam = 1.6e-3
    p = power_for_snr(snr_db, lam, 80.0)
    drones = (DroneState(math.radians(20), 80.0, 2000.0, p), DroneState(math.radians(40), 80.0, 4000.0, p))
    return ArrayGeometry(num_antennas, lam), drones, FrameConfig()


def check_trig_integral(cases: int = 1000, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        c = rng.uniform(-40, 40)
        sigma = 10 ** rng.uniform(-2, 0.5)
        lo = -rng.uniform(0, 4) * sigma if rng.random() < 0.8 else rng.uniform(-2, 2) * sigma
        hi = lo + rng.uniform(0.1, 6) * sigma
        f = lambda x, part: (np.cos if part == 0 else np.sin)(c * x) * math.exp(-x * x / (2 * sigma ** 2))
        re = integrate.quad(f, lo, hi, args=(0,), epsabs=1e-13, epsrel=1e-13, limit=400)[0]
        im = integrate.quad(f, lo, hi, args=(1,), epsabs=1e-13, epsrel=1e-13, limit=400)[0]
        val = gaussian_trig_integral(c, sigma, (lo, hi))
        worst = max(worst, abs(val - complex(re, im)))
    return CheckResult("gaussian_trig_integral vs quadrature", worst, 1e-9)


def check_moments(seed: int = 1) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(6):
        lam = 1.6e-3
        geo = ArrayGeometry(2, lam)
        cfg = FrameConfig(modulation_order=4)
        drone = DroneState(math.radians(rng.uniform(-60, 60)), 80.0, rng.uniform(-3e3, 3e3),
                           power_for_snr(rng.uniform(0, 12), lam, 80.0))
        sc = ScenarioSpec(geo, (drone,), cfg, 1, int(rng.integers(1, 4)))
        em = ErrorModel(rng.uniform(0.005, 0.05), rng.uniform(1, 400))
        q1 = int(rng.integers(1, 4))
        q2 = int(rng.integers(0, q1 + 1))
        combo = (0,)
        ratio = geo.spacing / lam
        eta_p = lam / (4 * math.pi * drone.range) * math.sqrt(drone.tx_power)

        def nu(dt, df):
            s_hat = math.sin(drone.doa) + dt * math.cos(drone.doa)
            z = sum(eta_p * np.exp(2j * math.pi * (i * ratio * (s_hat - math.sin(drone.doa))
                                                   - df * sc.subframe / cfg.sampling_rate)) for i in range(2))
            return z

        def integrand(df, dt):
            z = nu(dt, df)
            dens = (math.exp(-dt ** 2 / (2 * em.sigma_theta ** 2)) / (math.sqrt(2 * math.pi) * em.sigma_theta)
                    * math.exp(-df ** 2 / (2 * em.sigma_fd ** 2)) / (math.sqrt(2 * math.pi) * em.sigma_fd))
            return z.real ** q2 * z.imag ** (q1 - q2) * dens

        lo_f, hi_f = em.fd_bounds
        ref = integrate.dblquad(integrand, -math.pi, math.pi, lo_f, hi_f, epsabs=1e-12, epsrel=1e-11)[0]
        for engine in ("spectral", "odometer"):
            worst = max(worst, abs(moment_E67(sc, q1, q2, combo, em, engine=engine) - ref))
    return CheckResult("moment_E67 vs 2-D quadrature (K=1, N=2)", worst, 1e-6)


def check_mu_partials(seed: int = 2) -> CheckResult:
    geo, drones, cfg = reference_scenario()
    psi = pack([d.doa for d in drones], [d.range for d in drones], [d.doppler for d in drones])
    powers = [d.tx_power for d in drones]
    scale = np.abs(psi)
    worst = 0.0
    for l in (1, 3, 5):
        for k in (1, 2):
            parts = mu_partials(psi, k, geo, cfg, powers, l)
            for j, part in enumerate(parts):
                idx = j * len(drones) + k - 1
                h = 1e-6 * scale[idx]
                up, dn = psi.copy(), psi.copy()
                up[idx] += h
                dn[idx] -= h
                fd = (mean_vector(up, geo, cfg, powers, l) - mean_vector(dn, geo, cfg, powers, l)) / (2 * h)
                worst = max(worst, np.linalg.norm(fd - part) / np.linalg.norm(part))
    return CheckResult("mu_partials vs central differences (relative)", worst, 1e-6)


def check_zero_error_union_bound() -> CheckResult:
    worst = 0.0
    for n, m, snr in ((4, 4, 6.0), (6, 8, 9.0), (8, 16, 15.0)):
        lam = 1.6e-3
        d = DroneState(math.radians(30), 80.0, 1500.0, power_for_snr(snr, lam, 80.0))
        sc = ScenarioSpec(ArrayGeometry(n, lam), (d,), FrameConfig(modulation_order=m))
        gamma = 10 ** (snr / 10)
        ref = 2 * q_function(math.sqrt(2 * n * gamma) * math.sin(math.pi / m))
        for s in range(m):
            worst = max(worst, abs(conditional_ser(sc, (s,), (0.0, 0.0, 0.0)) - ref))
    return CheckResult("conditional_ser at zero error vs 2Q(sqrt(2N gamma) sin(pi/M))", worst, 1e-12)


def run_all(quick: bool = False) -> list[CheckResult]:
    return [
        check_trig_integral(100 if quick else 1000),
        check_moments(),
        check_mu_partials(),
        check_zero_error_union_bound(),
    ]
