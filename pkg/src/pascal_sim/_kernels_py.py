"""Pure-Python odometer kernel, used when the compiled extension is missing.

Mirrors ``_kernels.pyx`` line for line so both produce the same sums.
"""
from __future__ import annotations

import itertools

import numpy as np


def odometer_moment(q1: int, q2: int, weights, phases, char_theta, char_fd) -> float:
    """Stream every product-to-sum term of ``E[nu_x1^q2 nu_y1^(q1-q2)]``.

    Parameters
    ----------
    q1, q2 : int
        Total order and the number of cosine (``nu_x1``) factors.
    weights : (K,) array
        ``eta_p sqrt(P_p)`` per drone.
    phases : (K, N) array
        Zero-error phase of each (drone, antenna) term, in cycles.
    char_theta : (2 q1 (N-1) + 1,) complex array
        ``E[exp(j theta_rate c dtheta)]`` for integer ``c`` from ``-q1 (N-1)``.
    char_fd : (2 q1 + 1,) complex array
        ``E[exp(-j 2 pi l s dfd / fs)]`` for integer ``s`` from ``-q1``.

    Notes
    -----
    A digit picks ``(p, i, e)`` for one factor.  Flipping every sign maps a
    term onto its conjugate with the same real contribution, so the first
    factor keeps ``e = +1`` and the sum is doubled.
    """
    weights = np.asarray(weights, dtype=float)
    phases = np.asarray(phases, dtype=float)
    k, n = phases.shape
    kn = k * n
    if q1 == 0:
        return 1.0
    off_t = q1 * (n - 1)
    off_f = q1
    g2 = q1 - q2
    lead = (-1j) ** g2
    unit = np.exp(2j * np.pi * phases).ravel().tolist()
    w = weights.tolist()
    ct = np.asarray(char_theta).tolist()
    cf = np.asarray(char_fd).tolist()
    total = 0.0
    first = range(kn)
    rest = [range(2 * kn)] * (q1 - 1)
    for digits in itertools.product(first, *rest):
        c3 = 0
        se = 0
        rot = 1.0 + 0j
        wp = 1.0
        for g, d in enumerate(digits):
            e = 1 if d < kn else -1
            t = d % kn
            p, i = divmod(t, n)
            c3 += e * i
            se += e
            rot *= unit[t] if e > 0 else unit[t].conjugate()
            wp *= w[p] if g < q2 else e * w[p]
        total += wp * (lead * rot * ct[c3 + off_t] * cf[se + off_f]).real
    return 2.0 * total / 2.0 ** q1


def term_count(q1: int, num_drones: int, num_antennas: int) -> int:
    """Number of streamed terms after the sign fold."""
    if q1 == 0:
        return 1
    kn = num_drones * num_antennas
    return kn * (2 * kn) ** (q1 - 1)

