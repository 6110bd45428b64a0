"""Extended-precision reference values of the token objectives.

An independent scalar reimplementation in mpmath, used as the finite
difference oracle for the float64 analytic gradients. At 40 digits the
central-difference error is far below the 1e-6 relative tolerance even for
gradient components near 1e-8, which float64 differencing cannot resolve.
"""

from __future__ import annotations

import mpmath
import numpy as np

DPS = 40
STEP = mpmath.mpf("1e-12")
FLOOR = 1e-8


def _softmax(z):
    m = max(z)
    ex = [mpmath.exp(v - m) for v in z]
    s = mpmath.fsum(ex)
    return [e / s for e in ex]


def _demd(Q, target, E):
    et = E[target]
    return 1 - mpmath.fsum(Q[k] * mpmath.fsum(a * b for a, b in zip(E[k], et)) for k in range(len(Q)))


def loss_value(name, z, target, gamma=None, E=None, ratio=None):
    """Objective value at logits ``z`` as an mpf.

    ``ratio`` is the frozen MLE/DEMD weight for EMO; ``None`` recomputes it,
    which returns the EMO value itself (equal to MLE).
    """
    Q = _softmax(z)
    q = Q[target]
    lq = mpmath.log(q)
    if name == "mle":
        return -lq
    if name == "tailr":
        g = mpmath.mpf(gamma)
        return -(q / (g + (1 - g) * q)) * lq
    if name == "mixce":
        g = mpmath.mpf(gamma)
        return -(g + (1 - g) * q) * lq
    if name == "demd":
        return _demd(Q, target, E)
    if name == "emo":
        d = _demd(Q, target, E)
        if ratio is None:
            ratio = -lq / d if d > 1e-12 else 0
        return (-lq + ratio * d) / 2
    raise ValueError(f"unknown objective {name!r}")


def emo_ratio(z, target, E):
    """The gradient-blocked MLE/DEMD weight at ``z`` (0 when DEMD is dropped)."""
    with mpmath.workdps(DPS):
        zm = [mpmath.mpf(float(v)) for v in z]
        Em = [[mpmath.mpf(float(v)) for v in row] for row in np.asarray(E)]
        Q = _softmax(zm)
        d = _demd(Q, target, Em)
        return -mpmath.log(Q[target]) / d if d > 1e-12 else mpmath.mpf(0)


def grad_check(name, grad, z, target, gamma=None, E=None) -> float:
    """Max relative error of ``grad`` against 40-digit central differences.

    Same error measure as :func:`emolab.numerics.grad_check`. For EMO the
    ratio is frozen at ``z``, matching the stop-gradient in the objective.
    """
    grad = np.asarray(grad, dtype=np.float64)
    with mpmath.workdps(DPS):
        zm = [mpmath.mpf(float(v)) for v in z]
        Em = None if E is None else [[mpmath.mpf(float(v)) for v in row] for row in np.asarray(E)]
        ratio = emo_ratio(z, target, E) if name == "emo" else None
        worst = 0.0
        for i in range(len(zm)):
            hi = list(zm)
            lo = list(zm)
            hi[i] += STEP
            lo[i] -= STEP
            fd = (loss_value(name, hi, target, gamma, Em, ratio)
                  - loss_value(name, lo, target, gamma, Em, ratio)) / (2 * STEP)
            err = abs(grad[i] - float(fd)) / (abs(grad[i]) + FLOOR)
            worst = max(worst, err)
    return worst
