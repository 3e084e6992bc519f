"""Time the moment kernels: compiled odometer, pure-Python odometer, spectral grouping.

Usage::

    python benchmarks/bench_kernels.py [--repeat 3] [--max-order 5]

Each row evaluates one moment ``E[nu_x1^q2 nu_y1^(q1-q2)]`` for the
two-drone reference scenario and reports the best of ``--repeat`` runs.
"""
import argparse
import math
import timeit

import numpy as np

from pascal_sim import kernels
from pascal_sim.ser_analytic import ErrorModel, ScenarioSpec, _term_table, gaussian_char, moment_E67
from pascal_sim.signal_model import ArrayGeometry, DroneState, FrameConfig, power_for_snr


def scenario(antennas: int) -> ScenarioSpec:
    p = power_for_snr(9.0, 1.6e-3, 80.0)
    drones = (DroneState(math.radians(20), 80.0, 2000.0, p), DroneState(math.radians(40), 80.0, 4000.0, p))
    return ScenarioSpec(ArrayGeometry(antennas, 1.6e-3), drones, FrameConfig(), 1, 3)


def kernel_inputs(sc: ScenarioSpec, q1: int, em: ErrorModel):
    weights, phases, rate = _term_table(sc, np.array([2, 5]))
    n = sc.geometry.num_antennas
    a = np.arange(-q1 * (n - 1), q1 * (n - 1) + 1)
    b = np.arange(-q1, q1 + 1)
    ct = gaussian_char(a * rate, em.sigma_theta, em.theta_limits)
    cf = gaussian_char(-2 * np.pi * sc.subframe * b / sc.config.sampling_rate, em.sigma_fd, em.fd_bounds)
    return weights, phases, ct, cf


def best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--max-order", type=int, default=5)
    ap.add_argument("--antennas", type=int, default=3)
    args = ap.parse_args(argv)

    sc = scenario(args.antennas)
    em = ErrorModel(0.01, 50.0)
    print(f"compiled backend available: {kernels.BACKEND == 'cython'}")
    print(f"{'q1':>3} {'terms':>12} {'compiled s':>12} {'python s':>12} {'speedup':>8} {'spectral s':>12} {'max diff':>9}")
    for q1 in range(1, args.max_order + 1):
        q2 = q1 // 2
        w, ph, ct, cf = kernel_inputs(sc, q1, em)
        t_py = best(lambda: kernels.python_odometer_moment(q1, q2, w, ph, ct, cf), args.repeat)
        v_py = kernels.python_odometer_moment(q1, q2, w, ph, ct, cf)
        if kernels.BACKEND == "cython":
            t_c = best(lambda: kernels.odometer_moment(q1, q2, w, ph, ct, cf), args.repeat)
            v_c = kernels.odometer_moment(q1, q2, w, ph, ct, cf)
        else:
            t_c, v_c = float("nan"), v_py
        t_sp = best(lambda: moment_E67(sc, q1, q2, [2, 5], em), args.repeat)
        v_sp = moment_E67(sc, q1, q2, [2, 5], em)
        scale = max(abs(v_py), 1e-300)
        diff = max(abs(v_c - v_py), abs(v_sp - v_py)) / scale
        terms = kernels.term_count(q1, sc.num_drones, sc.geometry.num_antennas)
        print(f"{q1:>3} {terms:>12} {t_c:>12.4g} {t_py:>12.4g} {t_py / t_c:>8.1f} {t_sp:>12.4g} {diff:>9.1e}")


if __name__ == "__main__":
    main()
