"""Transport costs, transport plans and the exact earth mover distance.

Plans are oriented source-by-target: row ``i`` of a plan carries the mass of
the first distribution's token ``i`` and its column sums give the second
distribution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DegenerateEmbeddingError, DimensionError, InvalidInputError, InvariantError
from .numerics import as_distribution

MARGINAL_TOL = 1e-8


def _frozen(a):
    a = np.array(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class CostMatrix:
    entries: np.ndarray

    def __post_init__(self):
        c = _frozen(self.entries)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise DimensionError(f"cost matrix must be square, got shape {c.shape}")
        if not np.all(np.isfinite(c)):
            raise InvalidInputError("cost matrix contains non-finite entries")
        object.__setattr__(self, "entries", c)

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    def violations(self, tol: float = 1e-12) -> list[str]:
        """Human-readable list of broken cost-matrix invariants (empty if valid)."""
        c = self.entries
        out = []
        if np.any(c < 0):
            i, j = np.argwhere(c < 0)[0]
            out.append(f"negative cost {c[i, j]!r} at ({i}, {j})")
        if np.any(c > 2 + tol):
            out.append(f"cost above 2: max {c.max()!r}")
        if np.max(np.abs(c - c.T)) > tol:
            out.append("cost matrix is not symmetric")
        if np.max(np.abs(np.diag(c))) > tol:
            out.append("cost matrix has non-zero diagonal")
        return out


@dataclass(frozen=True)
class TransportPlan:
    mass: np.ndarray
    source_marginal: np.ndarray
    target_marginal: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mass", _frozen(self.mass))
        object.__setattr__(self, "source_marginal", _frozen(self.source_marginal))
        object.__setattr__(self, "target_marginal", _frozen(self.target_marginal))

    def check(self, tol: float = MARGINAL_TOL) -> None:
        if np.any(self.mass < 0):
            raise InvariantError("transport plan has negative mass")
        if np.max(np.abs(self.mass.sum(axis=1) - self.source_marginal)) > tol:
            raise InvariantError("row sums do not match the source marginal")
        if np.max(np.abs(self.mass.sum(axis=0) - self.target_marginal)) > tol:
            raise InvariantError("column sums do not match the target marginal")


def normalize_rows(E) -> np.ndarray:
    """Scale every token vector to unit norm."""
    E = np.asarray(E, dtype=np.float64)
    if E.ndim != 2:
        raise DimensionError(f"embeddings must be 2-D, got shape {E.shape}")
    norms = np.linalg.norm(E, axis=1)
    bad = np.flatnonzero(norms <= 1e-12)
    if bad.size:
        raise DegenerateEmbeddingError(int(bad[0]), float(norms[bad[0]]))
    return E / norms[:, None]


def cost_matrix_from_embeddings(E) -> CostMatrix:
    """Cosine-distance cost ``1 - cos(e_i, e_j)`` between token embeddings.

    ``E`` holds one embedding per row. Cosines are clamped to [-1, 1] and the
    diagonal is written as exact zeros.
    """
    En = normalize_rows(E)
    cos = np.clip(En @ En.T, -1.0, 1.0)
    c = 1.0 - cos
    c = 0.5 * (c + c.T)
    np.fill_diagonal(c, 0.0)
    return CostMatrix(c)


def _pair(p1, p2):
    p1 = as_distribution(p1, name="source distribution")
    p2 = as_distribution(p2, name="target distribution")
    if p1.shape != p2.shape:
        raise DimensionError(f"distribution lengths differ: {p1.size} vs {p2.size}")
    return p1, p2


def _as_cost(C) -> np.ndarray:
    return C.entries if isinstance(C, CostMatrix) else np.asarray(C, dtype=np.float64)


def surrogate_plan(Q, P) -> TransportPlan:
    """The outer-product plan ``Q(i) * P(j)``; always feasible, rarely optimal."""
    Q, P = _pair(Q, P)
    return TransportPlan(np.outer(Q, P), Q, P)


def plan_cost(plan: TransportPlan, C) -> float:
    c = _as_cost(C)
    if plan.mass.shape != c.shape:
        raise DimensionError(f"plan shape {plan.mass.shape} does not match cost shape {c.shape}")
    return float(np.sum(plan.mass * c))


def exact_emd(P1, P2, C) -> tuple[float, TransportPlan]:
    """Exact EMD between two distributions via network simplex.

    Only tokens with positive mass enter the LP, so the solve is over the
    supports of ``P1`` and ``P2``. Meant for oracle use on small vocabularies.
    """
    P1, P2 = _pair(P1, P2)
    c = _as_cost(C)
    if c.shape != (P1.size, P1.size):
        raise DimensionError(f"cost shape {c.shape} does not match vocabulary size {P1.size}")
    rows = np.flatnonzero(P1 > 0)
    cols = np.flatnonzero(P2 > 0)
    a = P1[rows]
    b = P2[cols] * (a.sum() / P2[cols].sum())
    sub = np.ascontiguousarray(c[np.ix_(rows, cols)])
    flow, _, _, _ = kernels.transport_simplex(a, b, sub)
    mass = np.zeros_like(c)
    mass[np.ix_(rows, cols)] = flow
    plan = TransportPlan(mass, P1, P2)
    try:
        plan.check()
    except InvariantError as exc:
        raise InvariantError(f"exact EMD produced an infeasible plan: {exc}") from exc
    return float(np.sum(flow * sub)), plan


def emd_dual(P1, P2, C) -> tuple[float, np.ndarray, np.ndarray]:
    """Optimal value together with dual potentials on the supports.

    Returns ``(value, u, v)`` with ``u``/``v`` of full vocabulary length (zero
    off-support), such that ``u[i] + v[j] <= C[i, j]`` on the supports and
    ``P1 @ u + P2 @ v`` equals the optimal cost.
    """
    P1, P2 = _pair(P1, P2)
    c = _as_cost(C)
    rows = np.flatnonzero(P1 > 0)
    cols = np.flatnonzero(P2 > 0)
    sub = np.ascontiguousarray(c[np.ix_(rows, cols)])
    b = P2[cols] * (P1[rows].sum() / P2[cols].sum())
    flow, u_s, v_s, _ = kernels.transport_simplex(P1[rows], b, sub)
    u = np.zeros(P1.size)
    v = np.zeros(P2.size)
    u[rows] = u_s
    v[cols] = v_s
    return float(np.sum(flow * sub)), u, v
