"""Kernel tests: each derived value is cross-checked against an
independent oracle (Kronecker vec-solve, support enumeration, grid
search) rather than against the implementation itself."""

import itertools

import numpy as np
import pytest

from climfs.errors import NumericError
from climfs.numkit import (AdamState, adam_step, ksparse_simplex_min,
                           laplacian, simplex_qp, soft_threshold,
                           solve_scaled_sylvester)

# ---------------------------------------------------------------- oracles


def kron_sylvester_oracle(d, lam, G, C):
    """Solve lam*diag(d)@W + W@G = C via the vectorized linear system.

    Row-major vec: vec(diag(d)@W) = (diag(d) kron I) vec(W) and
    vec(W@G) = (I kron G^T) vec(W).
    """
    p, c = C.shape
    A = lam * np.kron(np.diag(d), np.eye(c)) + np.kron(np.eye(p), G.T)
    return np.linalg.solve(A, C.reshape(-1)).reshape(p, c)


def project_simplex_oracle(y):
    """Textbook sort-based Euclidean projection onto the simplex."""
    n = y.shape[0]
    u = np.sort(y)[::-1]
    best_rho = 0
    for j in range(1, n + 1):
        if u[j - 1] - (np.sum(u[:j]) - 1.0) / j > 0:
            best_rho = j
    theta = (np.sum(u[:best_rho]) - 1.0) / best_rho
    return np.maximum(y - theta, 0.0)


def ksparse_enum_oracle(q, k, xi):
    """Minimize q.s + xi*||s||^2 over the k-sparse simplex by support
    enumeration: for each k-subset, project -q_A/(2 xi) onto the simplex."""
    n = q.shape[0]
    best_val, best_s = np.inf, None
    for sup in itertools.combinations(range(n), k):
        idx = list(sup)
        s_sub = project_simplex_oracle(-q[idx] / (2.0 * xi))
        s = np.zeros(n)
        s[idx] = s_sub
        val = q @ s + xi * (s @ s)
        if val < best_val - 1e-15:
            best_val, best_s = val, s
    return best_s, best_val


def simplex_grid_oracle(Q, c, step=1e-3):
    """Brute-force grid over the 2-simplex (V = 3 only)."""
    best_val, best_x = np.inf, None
    ticks = np.arange(0.0, 1.0 + step / 2, step)
    for a in ticks:
        for b in ticks[ticks <= 1.0 - a + step / 2]:
            x = np.array([a, b, max(1.0 - a - b, 0.0)])
            val = x @ Q @ x + c @ x
            if val < best_val:
                best_val, best_x = val, x
    return best_x, best_val


# ------------------------------------------------------------- sylvester


def test_sylvester_identity_case():
    # d = 1, G = I, lam = 1  =>  2 W = C
    C = np.array([[2.0, 4.0], [6.0, 8.0], [1.0, 0.0]])
    W = solve_scaled_sylvester(np.ones(3), 1.0, np.eye(2), C)
    np.testing.assert_allclose(W, C / 2.0, rtol=0, atol=1e-14)


def test_sylvester_matches_kron_oracle():
    rng = np.random.default_rng(7)
    for _ in range(200):
        p = int(rng.integers(1, 5))
        c = int(rng.integers(1, 5))
        d = rng.uniform(0.1, 3.0, size=p)
        lam = float(rng.uniform(0.05, 5.0))
        B = rng.normal(size=(c, c))
        G = B @ B.T
        C = rng.normal(size=(p, c))
        W = solve_scaled_sylvester(d, lam, G, C)
        W_or = kron_sylvester_oracle(d, lam, G, C)
        assert np.abs(W - W_or).max() <= 1e-8 * max(1.0, np.abs(W_or).max())


def test_sylvester_residual_many_instances():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        p = int(rng.integers(1, 9))
        c = int(rng.integers(1, 9))
        d = rng.uniform(0.05, 10.0, size=p)
        lam = float(rng.uniform(1e-3, 10.0))
        B = rng.normal(size=(c, c + 1))
        G = B @ B.T
        C = rng.normal(size=(p, c)) * rng.uniform(0.1, 10.0)
        W = solve_scaled_sylvester(d, lam, G, C)
        resid = lam * d[:, None] * W + W @ G - C
        assert np.linalg.norm(resid) <= 1e-8 * max(1.0, np.linalg.norm(C))


def test_sylvester_rejects_bad_inputs():
    C = np.ones((2, 2))
    with pytest.raises(ValueError):
        solve_scaled_sylvester(np.array([1.0, -1.0]), 1.0, np.eye(2), C)
    with pytest.raises(ValueError):
        solve_scaled_sylvester(np.ones(2), -1.0, np.eye(2), C)
    with pytest.raises(ValueError):
        solve_scaled_sylvester(np.ones(2), 1.0, np.array([[0.0, 1.0], [0.0, 0.0]]), C)
    # lam*d + min eig below the pencil floor
    with pytest.raises(NumericError):
        solve_scaled_sylvester(np.ones(2), 1e-13, np.zeros((2, 2)), C)


# -------------------------------------------------------- soft threshold


def test_soft_threshold_examples():
    A = np.array([[3.0, -0.5], [0.2, -2.0]])
    out = soft_threshold(A, 1.0)
    np.testing.assert_allclose(out, [[2.0, 0.0], [0.0, -1.0]], atol=0)
    np.testing.assert_allclose(soft_threshold(A, 0.0), A, atol=0)
    with pytest.raises(ValueError):
        soft_threshold(A, -0.1)


def test_soft_threshold_nonexpansive():
    rng = np.random.default_rng(3)
    for _ in range(300):
        a = rng.normal(size=7) * rng.uniform(0.1, 10)
        b = rng.normal(size=7) * rng.uniform(0.1, 10)
        tau = float(rng.uniform(0, 5))
        lhs = np.linalg.norm(soft_threshold(a, tau) - soft_threshold(b, tau))
        assert lhs <= np.linalg.norm(a - b) + 1e-12


# ------------------------------------------------------- ksparse simplex


def test_ksparse_worked_example():
    s, xi = ksparse_simplex_min(np.array([0.1, 0.2, 0.4, 0.9]), 2)
    np.testing.assert_allclose(s, [0.6, 0.4, 0.0, 0.0], atol=1e-15)
    assert xi == pytest.approx(0.25, abs=1e-15)


def test_ksparse_k1_is_onehot_at_argmin():
    q = np.array([0.7, 0.3, 0.9, 0.5])
    s, _ = ksparse_simplex_min(q, 1)
    np.testing.assert_allclose(s, [0.0, 1.0, 0.0, 0.0], atol=0)


def test_ksparse_ties_inside_selection_share_weight():
    # entries 0 and 2 tie but both sit strictly below q_(k+1): no
    # degeneracy, and the tied entries get identical weights
    q = np.array([0.5, 0.1, 0.5, 0.9])
    s, _ = ksparse_simplex_min(q, 3)
    assert s[3] == 0.0 and s[0] == s[2] > 0.0 and s[1] > s[0]


def test_ksparse_degenerate_raises():
    with pytest.raises(NumericError):
        ksparse_simplex_min(np.array([1.0, 1.0, 1.0, 2.0]), 2)  # 0/0 gap
    with pytest.raises(NumericError):
        ksparse_simplex_min(np.array([0.1, 0.5, 0.5, 0.9]), 2)  # zero weight
    with pytest.raises(ValueError):
        ksparse_simplex_min(np.array([1.0, 2.0]), 2)  # k must be < n


def test_ksparse_invariants_random():
    rng = np.random.default_rng(5)
    for _ in range(500):
        n = int(rng.integers(3, 12))
        k = int(rng.integers(1, n))
        q = rng.normal(size=n) * rng.uniform(0.1, 100)
        s, xi = ksparse_simplex_min(q, k)
        assert np.count_nonzero(s) == k
        assert s.min() >= 0.0
        assert abs(s.sum() - 1.0) <= 1e-12
        assert xi > 0


def test_ksparse_matches_enumeration_oracle():
    rng = np.random.default_rng(17)
    for _ in range(500):
        n = int(rng.integers(3, 7))
        k = int(rng.integers(1, min(4, n)))
        q = rng.normal(size=n) * rng.uniform(0.5, 5.0)
        s, xi = ksparse_simplex_min(q, k)
        _, best_val = ksparse_enum_oracle(q, k, xi)
        ours = q @ s + xi * (s @ s)
        assert ours <= best_val + 1e-8


# ------------------------------------------------------------ simplex QP


def test_simplex_qp_single_view():
    np.testing.assert_allclose(simplex_qp(np.array([[3.0]]), np.array([-1.0])), [1.0])


def test_simplex_qp_identical_views_symmetric():
    # Q = t * ones: objective is constant on the simplex; the polish
    # resolves the tie to the symmetric point.
    Q = 2.5 * np.ones((2, 2))
    c = np.array([-1.0, -1.0])
    np.testing.assert_allclose(simplex_qp(Q, c), [0.5, 0.5], atol=1e-9)


def test_simplex_qp_hand_case():
    # min a^2 + b^2 st a+b=1  ->  (0.5, 0.5)
    x = simplex_qp(np.eye(2))
    np.testing.assert_allclose(x, [0.5, 0.5], atol=1e-10)
    # strong pull toward the first coordinate
    x = simplex_qp(np.eye(2), np.array([-10.0, 0.0]))
    np.testing.assert_allclose(x, [1.0, 0.0], atol=1e-10)


def test_simplex_qp_matches_grid_oracle():
    rng = np.random.default_rng(23)
    for _ in range(20):
        B = rng.normal(size=(3, 3))
        Q = B @ B.T
        c = rng.normal(size=3)
        x = simplex_qp(Q, c)
        _, val_or = simplex_grid_oracle(Q, c)
        assert x @ Q @ x + c @ x <= val_or + 5e-3


def test_simplex_qp_kkt_residual_random():
    rng = np.random.default_rng(29)
    for _ in range(200):
        V = int(rng.integers(2, 7))
        B = rng.normal(size=(V, V + 1))
        Q = B @ B.T * rng.uniform(0.1, 10)
        c = rng.normal(size=V) * rng.uniform(0.1, 10)
        x = simplex_qp(Q, c)
        assert x.min() >= 0 and abs(x.sum() - 1.0) <= 1e-10
        g = 2 * Q @ x + c
        from climfs.numkit import _project_simplex
        assert np.abs(x - _project_simplex(x - g)).max() <= 1e-8


def test_simplex_qp_rejects_indefinite():
    with pytest.raises(NumericError):
        simplex_qp(np.array([[1.0, 0.0], [0.0, -1.0]]))


# ------------------------------------------------------------- laplacian


def test_laplacian_small_graph():
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    L = laplacian(A, symmetrize=False)
    np.testing.assert_allclose(L, [[0.0, -1.0], [0.0, 1.0]])
    Ls = laplacian(A, symmetrize=True)
    np.testing.assert_allclose(Ls, [[0.5, -0.5], [-0.5, 0.5]])


def test_laplacian_symmetrized_is_psd():
    rng = np.random.default_rng(31)
    for _ in range(100):
        n = int(rng.integers(2, 10))
        A = rng.uniform(0, 1, size=(n, n))
        L = laplacian(A, symmetrize=True)
        eigs = np.linalg.eigvalsh(L)
        assert eigs.min() >= -1e-10
        np.testing.assert_allclose(L @ np.ones(n), 0.0, atol=1e-10)


def test_laplacian_rejects_negative_entries():
    with pytest.raises(ValueError):
        laplacian(np.array([[0.0, -0.1], [0.0, 0.0]]), symmetrize=True)


# ------------------------------------------------------------------ adam


def test_adam_first_step_hand_value():
    st = AdamState.zeros((1,), lr=0.1)
    _, step = adam_step(st, np.array([1.0]))
    # mhat = vhat = 1 after bias correction -> step = lr / (1 + eps)
    assert step[0] == pytest.approx(0.1 / (1.0 + 1e-8), rel=1e-12)
    assert st.t == 1


def test_adam_zero_gradient_zero_step():
    st = AdamState.zeros((3, 2))
    _, step = adam_step(st, np.zeros((3, 2)))
    np.testing.assert_allclose(step, 0.0, atol=0)


def test_adam_constant_gradient_step_approaches_lr():
    st = AdamState.zeros((1,), lr=0.05)
    for _ in range(5000):
        _, step = adam_step(st, np.array([2.0]))
    assert step[0] == pytest.approx(0.05, rel=1e-3)


def test_adam_shape_mismatch():
    st = AdamState.zeros((2,))
    with pytest.raises(ValueError):
        adam_step(st, np.zeros(3))
