"""Independent reference computations used by the tests."""
import math

import numpy as np


def millman(E, z_branch, z_load):
    """PCC voltage and branch currents of a star network by Millman's theorem."""
    E, z = np.asarray(E, complex), np.asarray(z_branch, complex)
    v = np.sum(E / z) / (np.sum(1 / z) + 1 / z_load)
    return v, (E - v) / z


def inverter_phasor_response(L, R, C, Rv, kv, kc, s, vref, i):
    """Capacitor voltage of the cascaded loop at complex frequency s.

    Unknowns (iL, v, vinv, iref) solved as one linear system, written
    directly from the loop equations rather than from the polynomial forms.
    """
    Kv, Kc = kv(s), kc(s)
    # rows: (Ls+R) iL - vinv + v = 0 ; C s v - iL = -i ;
    #       iref + Kv v = Kv (vref - Rv i) + i ; vinv - v - Kc iref + Kc iL = 0
    A = np.array([[L * s + R, 1.0, -1.0, 0.0],
                  [-1.0, C * s, 0.0, 0.0],
                  [0.0, Kv, 0.0, 1.0],
                  [Kc, -1.0, 1.0, -Kc]], complex)
    b = np.array([0.0, -i, Kv * (vref - Rv * i) + i, 0.0], complex)
    return np.linalg.solve(A, b)[1]


def lpf_step(p, wp, t):
    return p * (1 - math.exp(-wp * t))


def bilinear(p, Ts, w):
    K = w / math.tan(w * Ts / 2)
    return (K + p) / (K - p)
