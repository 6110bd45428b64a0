import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.optimize import linprog

from emolab import _pykernels, kernels
from emolab.errors import DegenerateEmbeddingError, DimensionError, InvalidInputError, InvariantError
from emolab.transport import (
    CostMatrix,
    TransportPlan,
    cost_matrix_from_embeddings,
    emd_dual,
    exact_emd,
    normalize_rows,
    plan_cost,
    surrogate_plan,
)
from oracles import lp_vertex_emd


def random_problem(rng, n, sparsity=0.0):
    E = rng.normal(size=(n, 4))
    C = cost_matrix_from_embeddings(E)
    ps = []
    for _ in range(2):
        p = rng.dirichlet(np.full(n, 0.7))
        p[rng.random(n) < sparsity] = 0.0
        if p.sum() == 0:
            p[rng.integers(n)] = 1.0
        ps.append(p / p.sum())
    return ps[0], ps[1], C


def linprog_emd(a, b, C):
    n = a.size
    A = np.zeros((2 * n, n * n))
    for i in range(n):
        A[i, i * n:(i + 1) * n] = 1
        A[n + i, i::n] = 1
    res = linprog(C.ravel(), A_eq=A, b_eq=np.concatenate([a, b]), bounds=(0, None), method="highs")
    assert res.status == 0
    return res.fun


# -- cost matrix ------------------------------------------------------------

def test_cost_orthogonal():
    C = cost_matrix_from_embeddings([[1.0, 0.0], [0.0, 1.0]])
    np.testing.assert_array_equal(C.entries, [[0.0, 1.0], [1.0, 0.0]])


def test_cost_collinear_is_zero():
    C = cost_matrix_from_embeddings([[1.0, 0.0], [2.0, 0.0]])
    np.testing.assert_allclose(C.entries, np.zeros((2, 2)), atol=1e-15)


def test_cost_three_token_value(three_token_embeddings):
    C = cost_matrix_from_embeddings(three_token_embeddings).entries
    # 1 - 1/sqrt(2) in 30-digit arithmetic: 0.292893218813452475599155637895
    assert C[0, 2] == pytest.approx(0.2928932188134524, abs=1e-15)
    assert C[1, 2] == pytest.approx(0.2928932188134524, abs=1e-15)
    assert C[0, 1] == pytest.approx(1.0, abs=1e-15)


def test_cost_degenerate_row_names_index():
    with pytest.raises(DegenerateEmbeddingError) as exc:
        cost_matrix_from_embeddings([[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]])
    assert exc.value.index == 1
    assert "1" in str(exc.value)


def test_cost_antiparallel_reaches_two():
    C = cost_matrix_from_embeddings([[1.0, 0.0], [-1.0, 0.0]])
    assert C.entries[0, 1] == 2.0


@settings(max_examples=100)
@given(arrays(np.float64, st.tuples(st.integers(2, 10), st.integers(1, 6)), elements=st.floats(-10, 10)))
def test_cost_invariants(E):
    assume(np.all(np.linalg.norm(E, axis=1) > 1e-6))
    C = cost_matrix_from_embeddings(E)
    assert C.violations() == []
    assert np.all(C.entries >= 0) and np.all(C.entries <= 2)
    np.testing.assert_array_equal(C.entries, C.entries.T)
    assert np.all(np.diag(C.entries) == 0)


@settings(max_examples=100)
@given(arrays(np.float64, (6, 3), elements=st.floats(0.1, 5)), arrays(np.float64, 6, elements=st.floats(0.01, 100)))
def test_cost_scale_invariance(E, scale):
    a = cost_matrix_from_embeddings(E).entries
    b = cost_matrix_from_embeddings(E * scale[:, None]).entries
    assert np.max(np.abs(a - b)) <= 1e-12


def test_cost_matrix_validation():
    with pytest.raises(DimensionError):
        CostMatrix(np.zeros((2, 3)))
    with pytest.raises(InvalidInputError):
        CostMatrix(np.array([[0.0, np.nan], [1.0, 0.0]]))
    bad = CostMatrix(np.array([[0.1, -1.0], [3.0, 0.0]]))
    text = " ".join(bad.violations())
    assert "negative" in text and "2" in text


def test_unit_rows():
    E = normalize_rows([[3.0, 4.0], [0.0, 2.0]])
    np.testing.assert_allclose(np.linalg.norm(E, axis=1), 1.0, atol=1e-15)


# -- plans --------------------------------------------------------------------

def test_surrogate_one_hots():
    plan = surrogate_plan([1.0, 0.0], [0.0, 1.0])
    np.testing.assert_array_equal(plan.mass, [[0.0, 1.0], [0.0, 0.0]])


def test_surrogate_uniform():
    np.testing.assert_array_equal(surrogate_plan([0.5, 0.5], [0.5, 0.5]).mass, np.full((2, 2), 0.25))


def test_surrogate_three_token():
    plan = surrogate_plan([0.5, 0.5, 0.0], [1.0, 0.0, 0.0])
    np.testing.assert_array_equal(plan.mass, [[0.5, 0, 0], [0.5, 0, 0], [0, 0, 0]])
    np.testing.assert_array_equal(plan.source_marginal, [0.5, 0.5, 0.0])


def test_surrogate_length_mismatch():
    with pytest.raises(DimensionError):
        surrogate_plan([0.5, 0.5], [1.0, 0.0, 0.0])


def test_plan_cost_examples():
    C = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert plan_cost(surrogate_plan([0.5, 0.5], [1.0, 0.0]), C) == 0.5
    assert plan_cost(surrogate_plan([0.3, 0.7], [0.6, 0.4]), np.zeros((2, 2))) == 0.0
    diag = TransportPlan(np.diag([0.3, 0.7]), np.array([0.3, 0.7]), np.array([0.3, 0.7]))
    assert plan_cost(diag, C) == 0.0
    with pytest.raises(DimensionError):
        plan_cost(diag, np.zeros((3, 3)))


def test_plan_check_rejects_bad_plans():
    with pytest.raises(InvariantError):
        TransportPlan(np.array([[1.1, -0.1], [0.0, 0.0]]), np.array([1.0, 0.0]), np.array([1.1, -0.1])).check()
    with pytest.raises(InvariantError):
        TransportPlan(np.array([[0.5, 0.0], [0.0, 0.5]]), np.array([1.0, 0.0]), np.array([0.5, 0.5])).check()
    plan = surrogate_plan([0.2, 0.8], [0.6, 0.4])
    plan.check()
    assert not plan.mass.flags.writeable


# -- exact solver ---------------------------------------------------------------

def test_exact_identical_is_zero(rng):
    P, _, C = random_problem(rng, 7)
    value, plan = exact_emd(P, P, C)
    assert abs(value) <= 1e-12


def test_exact_one_hots_give_cost_entry(rng):
    _, _, C = random_problem(rng, 5)
    for i in range(5):
        for j in range(5):
            value, plan = exact_emd(np.eye(5)[i], np.eye(5)[j], C)
            assert value == pytest.approx(C.entries[i, j], abs=1e-15)
            assert plan.mass[i, j] == 1.0


def test_exact_three_token_example(three_token_embeddings):
    C = cost_matrix_from_embeddings(three_token_embeddings)
    value, plan = exact_emd([0.5, 0.5, 0.0], [1.0, 0.0, 0.0], C)
    assert value == pytest.approx(0.5, abs=1e-12)
    assert value == pytest.approx(lp_vertex_emd([0.5, 0.5, 0.0], [1.0, 0.0, 0.0], C.entries), abs=1e-12)


def test_exact_plan_orientation(three_token_embeddings):
    C = cost_matrix_from_embeddings(three_token_embeddings)
    _, plan = exact_emd([0.5, 0.5, 0.0], [1.0, 0.0, 0.0], C)
    np.testing.assert_allclose(plan.mass.sum(axis=1), [0.5, 0.5, 0.0], atol=1e-12)
    np.testing.assert_allclose(plan.mass.sum(axis=0), [1.0, 0.0, 0.0], atol=1e-12)


def test_exact_dimension_mismatch(rng):
    _, _, C = random_problem(rng, 3)
    with pytest.raises(DimensionError):
        exact_emd([0.5, 0.5], [0.5, 0.5], C)


def test_exact_matches_vertex_enumeration(rng):
    for trial in range(150):
        n = int(rng.integers(2, 5))
        a, b, C = random_problem(rng, n, sparsity=0.25 if trial % 3 == 0 else 0.0)
        value, plan = exact_emd(a, b, C)
        assert value == pytest.approx(lp_vertex_emd(a, b, C.entries), abs=1e-9)
        plan.check()


def test_exact_matches_linprog(rng):
    for trial in range(150):
        n = int(rng.integers(2, 17))
        a, b, C = random_problem(rng, n, sparsity=0.3 if trial % 2 else 0.0)
        value, _ = exact_emd(a, b, C)
        assert value == pytest.approx(linprog_emd(a, b, C.entries), abs=1e-9)


def test_exact_symmetry_and_positivity(rng):
    for _ in range(100):
        n = int(rng.integers(2, 12))
        a, b, C = random_problem(rng, n)
        v1, _ = exact_emd(a, b, C)
        v2, _ = exact_emd(b, a, C)
        assert abs(v1 - v2) <= 1e-9
        if not np.allclose(a, b) and np.all(C.entries[~np.eye(n, dtype=bool)] > 0):
            assert v1 > 0


def test_dual_certificate(rng):
    for _ in range(50):
        n = int(rng.integers(2, 10))
        a, b, C = random_problem(rng, n)
        value, u, v = emd_dual(a, b, C)
        assert value == pytest.approx(exact_emd(a, b, C)[0], abs=1e-12)
        # Dual feasibility on the supports and strong duality.
        sa, sb = a > 0, b > 0
        slack = C.entries[np.ix_(sa, sb)] - u[sa][:, None] - v[sb][None, :]
        assert slack.min() >= -1e-12
        assert u[sa] @ a[sa] + v[sb] @ b[sb] == pytest.approx(value, abs=1e-12)


def test_degenerate_ties_terminate():
    # Uniform marginals with integer costs give heavily degenerate pivots.
    n = 8
    C = np.abs(np.subtract.outer(np.arange(n), np.arange(n))).astype(float)
    C = np.minimum(C, 2.0)
    a = np.full(n, 1 / n)
    value, plan = exact_emd(a, a[::-1].copy(), C)
    assert value == pytest.approx(0.0, abs=1e-12)
    value, _ = exact_emd(np.eye(n)[0] * 0.5 + np.eye(n)[1] * 0.5, a, C)
    assert value == pytest.approx(linprog_emd(np.eye(n)[0] * 0.5 + np.eye(n)[1] * 0.5, a, C), abs=1e-12)


# -- backends -----------------------------------------------------------------

@pytest.mark.skipif(kernels.BACKEND != "cython", reason="compiled extension not built")
def test_backends_agree(rng):
    from emolab import _ckernels

    for _ in range(200):
        n, m = int(rng.integers(1, 13)), int(rng.integers(1, 13))
        a = rng.dirichlet(np.ones(n))
        b = rng.dirichlet(np.ones(m))
        cost = rng.random((n, m)).round(1)
        fp, up, vp, ip = _pykernels.transport_simplex(a, b, cost)
        fc, uc, vc, ic = _ckernels.transport_simplex(a, b, cost)
        assert ip == ic
        np.testing.assert_allclose(fp, fc, atol=1e-14)
        np.testing.assert_allclose(up, uc, atol=1e-14)
        x = rng.integers(0, 4, size=int(rng.integers(0, 15)))
        y = rng.integers(0, 4, size=int(rng.integers(0, 15)))
        assert _pykernels.lcs_length(x, y) == _ckernels.lcs_length(x, y)


def test_pure_python_kernel_matches_linprog(rng):
    for _ in range(40):
        n = int(rng.integers(2, 9))
        a, b, C = random_problem(rng, n)
        flow, _, _, _ = _pykernels.transport_simplex(a, b, C.entries)
        assert float((flow * C.entries).sum()) == pytest.approx(linprog_emd(a, b, C.entries), abs=1e-9)


def test_backend_switch_environment():
    import os
    import subprocess
    import sys

    env = {**os.environ, "EMOLAB_PURE_PYTHON": "1"}
    out = subprocess.run([sys.executable, "-c", "from emolab import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_benchmark_script_runs():
    import pathlib
    import runpy

    path = pathlib.Path(__file__).parent.parent / "benchmarks" / "bench_kernels.py"
    assert path.exists()
    mod = runpy.run_path(str(path))
    assert "main" in mod
