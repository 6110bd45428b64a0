"""Token-level training objectives with analytic gradients w.r.t. logits.

Each single-token function has a batched counterpart (``*_batch``) operating
on a 2-D array of logits with one row per position; the language model uses
the batched forms. All gradients are exact closed forms, no autodiff.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionError, InvalidInputError
from .numerics import as_distribution, as_vector, log_softmax
from .transport import CostMatrix, _as_cost

DEMD_FLOOR = 1e-12
UNIT_TOL = 1e-9


class Objective(str, enum.Enum):
    MLE = "mle"
    TAILR = "tailr"
    MIXCE = "mixce"
    DEMD = "demd"
    EMO = "emo"

    @classmethod
    def parse(cls, name) -> "Objective":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).lower())
        except ValueError:
            choices = ", ".join(o.value for o in cls)
            raise InvalidInputError(f"unknown objective {name!r} (choose from {choices})") from None


@dataclass(frozen=True)
class LossConfig:
    """Which objective to train with and its required extras.

    ``mixing_gamma`` is the TaiLr/MixCE interpolation weight. ``e_hat`` is the
    frozen, unit-row embedding matrix that defines the cosine transport cost
    for DEMD and EMO. ``detach_weight`` treats the probability-dependent
    TaiLr/MixCE coefficient as a constant in the gradient (the value is
    unchanged); by default the exact gradient is used.
    """

    objective: Objective
    mixing_gamma: Optional[float] = None
    e_hat: Optional[np.ndarray] = None
    detach_weight: bool = False

    def __post_init__(self):
        obj = Objective.parse(self.objective)
        object.__setattr__(self, "objective", obj)
        needs_gamma = obj in (Objective.TAILR, Objective.MIXCE)
        needs_cost = obj in (Objective.DEMD, Objective.EMO)
        if needs_gamma != (self.mixing_gamma is not None):
            raise InvalidInputError(
                f"mixing_gamma must be given exactly for tailr/mixce (objective {obj.value})"
            )
        if needs_gamma:
            _check_gamma(self.mixing_gamma)
        if needs_cost != (self.e_hat is not None):
            raise InvalidInputError(
                f"e_hat must be given exactly for demd/emo (objective {obj.value})"
            )
        if needs_cost:
            e = np.array(self.e_hat, dtype=np.float64)
            _check_unit_rows(e)
            e.flags.writeable = False
            object.__setattr__(self, "e_hat", e)


@dataclass(frozen=True)
class LossOutput:
    value: float
    grad_logits: np.ndarray


def _check_gamma(gamma):
    if not 0.0 <= gamma <= 1.0:
        raise InvalidInputError(f"mixing gamma must lie in [0, 1], got {gamma!r}")


def _check_unit_rows(E):
    if E.ndim != 2:
        raise DimensionError(f"E_hat must be 2-D, got shape {E.shape}")
    norms = np.linalg.norm(E, axis=1)
    bad = np.flatnonzero(np.abs(norms - 1.0) > UNIT_TOL)
    if bad.size:
        raise InvalidInputError(f"E_hat row {bad[0]} has norm {norms[bad[0]]!r}, expected 1")


def _prep(Z, targets):
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2:
        raise DimensionError(f"batched logits must be 2-D, got shape {Z.shape}")
    t = np.asarray(targets, dtype=np.int64)
    if t.shape != (Z.shape[0],):
        raise DimensionError(f"expected {Z.shape[0]} targets, got shape {t.shape}")
    if np.any((t < 0) | (t >= Z.shape[1])):
        raise InvalidInputError(f"target index out of range for vocabulary of size {Z.shape[1]}")
    logp = log_softmax(Z)
    rows = np.arange(Z.shape[0])
    return logp, t, rows


def _residual(Q, t, rows):
    """``one_hot(t) - Q`` row by row."""
    r = -Q
    r[rows, t] += 1.0
    return r


def mle_batch(Z, targets):
    logp, t, rows = _prep(Z, targets)
    Q = np.exp(logp)
    g = Q.copy()
    g[rows, t] -= 1.0
    return -logp[rows, t], g


def tailr_batch(Z, targets, gamma, detach=False):
    _check_gamma(gamma)
    logp, t, rows = _prep(Z, targets)
    Q = np.exp(logp)
    lq = logp[rows, t]
    q = Q[rows, t]
    denom = gamma + (1.0 - gamma) * q
    value = -(q / denom) * lq
    if detach:
        return value, (-(q / denom))[:, None] * _residual(Q, t, rows)
    # d value / d q = -(gamma * log q / denom^2 + 1 / denom); dq/dz = q (onehot - Q)
    dq = -(gamma * lq / denom**2 + 1.0 / denom)
    return value, (dq * q)[:, None] * _residual(Q, t, rows)


def mixce_batch(Z, targets, gamma, detach=False):
    _check_gamma(gamma)
    logp, t, rows = _prep(Z, targets)
    Q = np.exp(logp)
    lq = logp[rows, t]
    q = Q[rows, t]
    coef = gamma + (1.0 - gamma) * q
    value = -coef * lq
    if detach:
        return value, (-coef)[:, None] * _residual(Q, t, rows)
    scale = -((1.0 - gamma) * q * lq + coef)
    return value, scale[:, None] * _residual(Q, t, rows)


def demd_batch(Z, targets, E_hat):
    """DEMD against one-hot targets in the contracted ``1 - <E Q, e_t>`` form.

    Gradient: ``Q_k * (c_k - DEMD)`` with ``c_k = 1 - <e_k, e_t>``.
    """
    E = np.asarray(E_hat, dtype=np.float64)
    logp, t, rows = _prep(Z, targets)
    if E.shape[0] != logp.shape[1]:
        raise DimensionError(f"E_hat has {E.shape[0]} rows for a vocabulary of {logp.shape[1]}")
    Q = np.exp(logp)
    et = E[t]
    raw = 1.0 - np.einsum("bd,bd->b", Q @ E, et)
    c = 1.0 - et @ E.T
    return np.maximum(raw, 0.0), Q * (c - raw[:, None])


def emo_batch(Z, targets, E_hat):
    """``0.5 * (MLE + sg(MLE / DEMD) * DEMD)``; rows with DEMD <= 1e-12 keep only MLE."""
    mle_v, mle_g = mle_batch(Z, targets)
    demd_v, demd_g = demd_batch(Z, targets, E_hat)
    live = demd_v > DEMD_FLOOR
    ratio = np.where(live, mle_v / np.where(live, demd_v, 1.0), 0.0)
    value = 0.5 * (mle_v + ratio * demd_v)
    grad = 0.5 * (mle_g + ratio[:, None] * demd_g)
    return value, grad


def batch_losses(Z, targets, config: LossConfig):
    obj = config.objective
    if obj is Objective.MLE:
        return mle_batch(Z, targets)
    if obj is Objective.TAILR:
        return tailr_batch(Z, targets, config.mixing_gamma, config.detach_weight)
    if obj is Objective.MIXCE:
        return mixce_batch(Z, targets, config.mixing_gamma, config.detach_weight)
    if obj is Objective.DEMD:
        return demd_batch(Z, targets, config.e_hat)
    return emo_batch(Z, targets, config.e_hat)


def _single(fn, z, target, *args) -> LossOutput:
    z = as_vector(z, "logits")
    if not 0 <= int(target) < z.size:
        raise InvalidInputError(f"target {target} out of range for vocabulary of size {z.size}")
    v, g = fn(z[None, :], [int(target)], *args)
    return LossOutput(float(v[0]), g[0])


def mle_loss(z, target) -> LossOutput:
    return _single(mle_batch, z, target)


def tailr_loss(z, target, gamma) -> LossOutput:
    return _single(tailr_batch, z, target, gamma)


def mixce_loss(z, target, gamma) -> LossOutput:
    return _single(mixce_batch, z, target, gamma)


def demd_loss(z, target, E_hat) -> LossOutput:
    E = np.asarray(E_hat, dtype=np.float64)
    _check_unit_rows(E)
    return _single(demd_batch, z, target, E)


def emo_loss(z, target, E_hat) -> LossOutput:
    E = np.asarray(E_hat, dtype=np.float64)
    _check_unit_rows(E)
    return _single(emo_batch, z, target, E)


def token_loss(z, target, config: LossConfig) -> LossOutput:
    return _single(batch_losses, z, target, config)


def demd_general_loss(Q, P, C) -> float:
    """Generalized DEMD for a dense target: ``sum_i |Q_i - P_i| (C P)_i``."""
    Q = as_distribution(Q, name="Q")
    P = as_distribution(P, name="P")
    c = _as_cost(C)
    if Q.shape != P.shape or c.shape != (P.size, P.size):
        raise DimensionError("Q, P and C dimensions do not agree")
    return float(np.abs(Q - P) @ (c @ P))


def sequence_loss(logits, targets, config: LossConfig, mask=None):
    """Mean token loss over unmasked positions and its gradient w.r.t. logits.

    ``logits`` is ``(..., V)`` and ``targets``/``mask`` share its leading
    shape. Returns ``(value, grad)`` where ``grad`` already carries the
    ``1 / count`` factor of the mean and is zero at masked positions.
    """
    Z = np.asarray(logits, dtype=np.float64)
    t = np.asarray(targets, dtype=np.int64)
    if Z.ndim < 2 or t.shape != Z.shape[:-1]:
        raise DimensionError(f"logits shape {Z.shape} does not align with targets shape {t.shape}")
    m = np.ones(t.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if m.shape != t.shape:
        raise DimensionError(f"mask shape {m.shape} does not match targets shape {t.shape}")
    count = int(m.sum())
    if count == 0:
        raise InvalidInputError("sequence_loss needs at least one unmasked position")
    V = Z.shape[-1]
    flat_z = Z.reshape(-1, V)
    flat_m = m.reshape(-1)
    grad = np.zeros_like(flat_z)
    vals, g = batch_losses(flat_z[flat_m], t.reshape(-1)[flat_m], config)
    grad[flat_m] = g / count
    return float(vals.sum() / count), grad.reshape(Z.shape)


__all__ = [
    "Objective",
    "LossConfig",
    "LossOutput",
    "CostMatrix",
    "mle_loss",
    "tailr_loss",
    "mixce_loss",
    "demd_loss",
    "demd_general_loss",
    "emo_loss",
    "token_loss",
    "sequence_loss",
    "batch_losses",
]
