"""Dense numeric kernels used by the alternating optimizer.

All kernels operate on float64 numpy arrays and are pure functions except
for `adam_step`, which advances an `AdamState` in place (single-owner
mutable; everything else is safe to share across threads).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from climfs.errors import NumericError

# Floor for the spectral pencil lam*d_i + eig_j in the Sylvester solver.
PENCIL_FLOOR = 1e-12
# Absolute tolerance for symmetry checks on small Gram matrices.
SYM_TOL = 1e-10
# Entries closer to zero than this are treated as inactive in the simplex QP.
ACTIVE_TOL = 1e-12


def solve_scaled_sylvester(d: np.ndarray, lam: float, G: np.ndarray,
                           C: np.ndarray) -> np.ndarray:
    """Solve lam * diag(d) @ W + W @ G = C for W.

    The right factor G must be symmetric positive semidefinite, so the
    system decouples in the eigenbasis of G: with G = Q diag(mu) Q^T the
    solution is W = ((C @ Q) / (lam * d[:, None] + mu[None, :])) @ Q^T.

    Parameters
    ----------
    d : (p,) array, strictly positive row scalings.
    lam : positive scalar multiplying diag(d).
    G : (c, c) symmetric PSD matrix.
    C : (p, c) right-hand side.

    Returns
    -------
    W : (p, c) array solving the equation to working precision.

    Raises
    ------
    ValueError
        On bad shapes, non-positive `d` or `lam`, or asymmetric G.
    NumericError
        If some lam * d_i + mu_j falls below ``PENCIL_FLOOR`` (singular
        pencil: the diagonal system cannot be inverted stably).
    """
    d = np.asarray(d, dtype=float)
    G = np.asarray(G, dtype=float)
    C = np.asarray(C, dtype=float)
    if d.ndim != 1 or G.ndim != 2 or C.ndim != 2:
        raise ValueError("d must be 1-D and G, C 2-D")
    p, c = C.shape
    if d.shape[0] != p or G.shape != (c, c):
        raise ValueError(f"shape mismatch: d{d.shape}, G{G.shape}, C{C.shape}")
    if lam <= 0:
        raise ValueError("lam must be positive")
    if not np.all(d > 0):
        raise ValueError("all entries of d must be strictly positive")
    gmax = max(1.0, float(np.abs(G).max(initial=0.0)))
    if float(np.abs(G - G.T).max(initial=0.0)) > SYM_TOL * gmax:
        raise ValueError("G must be symmetric")

    mu, Q = np.linalg.eigh(G)
    denom_min = lam * float(d.min()) + float(mu.min())
    if denom_min < PENCIL_FLOOR:
        raise NumericError(
            f"singular pencil: min(lam*d_i + mu_j) = {denom_min:.3e} "
            f"< {PENCIL_FLOOR:.0e}")
    Ct = C @ Q
    Wt = Ct / (lam * d[:, None] + mu[None, :])
    return Wt @ Q.T


def soft_threshold(A: np.ndarray, tau: float) -> np.ndarray:
    """Elementwise shrinkage sign(a) * max(|a| - tau, 0); tau >= 0."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    A = np.asarray(A, dtype=float)
    return np.sign(A) * np.maximum(np.abs(A) - tau, 0.0)


def ksparse_simplex_min(q: np.ndarray, k: int) -> tuple[np.ndarray, float]:
    """Minimize q.s + (half-gap) * ||s||^2 over the k-sparse probability simplex.

    Sorting q ascending (stable, so ties resolve to the lowest original
    index), the weight on the t-th smallest entry is

        s_t = (q_(k+1) - q_(t)) / (k * q_(k+1) - sum_{u<=k} q_(u)),

    zero elsewhere, which places exactly k nonzero weights as long as
    q_(k) < q_(k+1) strictly. The returned scalar is the half-gap

        xi = (k * q_(k+1) - sum_{u<=k} q_(u)) / 2,

    the self-tuned quadratic coefficient: `s` is the exact global minimizer
    of q.s + xi * ||s||^2 over the k-sparse simplex. Callers that split the
    coefficient into named parts (e.g. subtracting a squared view weight)
    handle that offset themselves.

    Raises
    ------
    NumericError
        If q_(k) == q_(k+1), exactly or at working precision: the
        neighborhood is degenerate (the formula would produce a zero
        weight among the k selected, or 0/0 when all k+1 smallest entries
        tie). Callers should perturb q and retry.
    """
    q = np.asarray(q, dtype=float)
    if q.ndim != 1:
        raise ValueError("q must be 1-D")
    n = q.shape[0]
    if not 1 <= k < n:
        raise ValueError(f"need 1 <= k < len(q), got k={k}, len={n}")
    if not np.all(np.isfinite(q)):
        raise ValueError("q must be finite")

    order = np.argsort(q, kind="stable")
    qs = q[order]
    if not qs[k] > qs[k - 1]:
        raise NumericError(
            "degenerate neighborhood: q_(k) == q_(k+1), closed form cannot "
            "place k strictly positive weights")
    # Summing the positive differences instead of k*qs[k] - sum(qs[:k])
    # avoids the cancellation that can round the gap to exactly zero when
    # the k+1 smallest entries differ only in their last bits.
    diffs = qs[k] - qs[:k]
    gap = diffs.sum()
    if not gap > 0.0:
        raise NumericError(
            "degenerate neighborhood: k smallest entries tie with q_(k+1) "
            "at working precision")
    vals = diffs / gap
    vals /= vals.sum()  # pin the simplex sum to 1 exactly at working precision
    s = np.zeros(n)
    s[order[:k]] = vals
    return s, gap / 2.0


def _project_simplex(y: np.ndarray) -> np.ndarray:
    """Euclidean projection of y onto the probability simplex."""
    u = np.sort(y)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, y.shape[0] + 1)
    cond = u - css / idx > 0
    rho = idx[cond][-1]
    theta = css[rho - 1] / rho
    return np.maximum(y - theta, 0.0)


def _qp_objective(Q: np.ndarray, c: np.ndarray, x: np.ndarray) -> float:
    return float(x @ Q @ x + c @ x)


def _qp_kkt_residual(Q: np.ndarray, c: np.ndarray, x: np.ndarray) -> float:
    """Fixed-point residual ||x - proj(x - grad)||_inf; zero iff optimal."""
    g = 2.0 * Q @ x + c
    return float(np.abs(x - _project_simplex(x - g)).max())


def simplex_qp(Q: np.ndarray, c: np.ndarray | None = None,
               tol: float = 1e-8) -> np.ndarray:
    """Minimize x^T Q x + c^T x over the probability simplex.

    Q must be symmetric PSD (within a small tolerance). Projected gradient
    from the uniform start is followed by an active-set polish (least-
    squares on the KKT system of the detected support, so flat objectives
    resolve to the minimum-norm, symmetric solution). If the fixed-point
    residual still exceeds `tol` the supports are enumerated outright.

    Returns the minimizer; raises NumericError if Q is not PSD or no
    iterate meets the residual tolerance.
    """
    Q = np.asarray(Q, dtype=float)
    V = Q.shape[0]
    if Q.shape != (V, V):
        raise ValueError("Q must be square")
    if c is None:
        c = np.zeros(V)
    c = np.asarray(c, dtype=float)
    if c.shape != (V,):
        raise ValueError("c must have shape (V,)")
    qmax = max(1.0, float(np.abs(Q).max(initial=0.0)))
    if float(np.abs(Q - Q.T).max(initial=0.0)) > SYM_TOL * qmax:
        raise ValueError("Q must be symmetric")
    eigs = np.linalg.eigvalsh(Q)
    if eigs[0] < -1e-8 * qmax:
        raise NumericError(f"Q is not PSD: min eigenvalue {eigs[0]:.3e}")
    if V == 1:
        return np.ones(1)

    L = 2.0 * max(float(eigs[-1]), 1e-30)
    x = np.full(V, 1.0 / V)
    for _ in range(20000):
        x_new = _project_simplex(x - (2.0 * Q @ x + c) / L)
        if np.abs(x_new - x).max() < 1e-15:
            x = x_new
            break
        x = x_new

    best = x
    polished = _polish_support(Q, c, x > 1e-10)
    if polished is not None and _qp_objective(Q, c, polished) <= _qp_objective(Q, c, best) + 1e-12:
        best = polished

    if _qp_kkt_residual(Q, c, best) > tol and V <= 16:
        # Exhaustive support enumeration: exact for any PSD instance.
        from itertools import combinations
        for size in range(1, V + 1):
            for sup in combinations(range(V), size):
                mask = np.zeros(V, dtype=bool)
                mask[list(sup)] = True
                cand = _polish_support(Q, c, mask)
                if cand is None:
                    continue
                if _qp_objective(Q, c, cand) < _qp_objective(Q, c, best) - 1e-15:
                    best = cand
    if _qp_kkt_residual(Q, c, best) > tol:
        raise NumericError("simplex QP failed to reach the KKT tolerance")
    return best


def _polish_support(Q: np.ndarray, c: np.ndarray,
                    mask: np.ndarray) -> np.ndarray | None:
    """Solve the equality-KKT system on a support; None if infeasible."""
    idx = np.flatnonzero(mask)
    m = idx.shape[0]
    if m == 0:
        return None
    kkt = np.zeros((m + 1, m + 1))
    kkt[:m, :m] = 2.0 * Q[np.ix_(idx, idx)]
    kkt[:m, m] = 1.0
    kkt[m, :m] = 1.0
    rhs = np.concatenate([-c[idx], [1.0]])
    sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
    xs = sol[:m]
    if xs.min(initial=0.0) < -ACTIVE_TOL:
        return None
    x = np.zeros(Q.shape[0])
    x[idx] = np.maximum(xs, 0.0)
    ssum = x.sum()
    if ssum <= 0:
        return None
    return x / ssum


def laplacian(A: np.ndarray, symmetrize: bool) -> np.ndarray:
    """Graph Laplacian diag(colsums) - A of a nonnegative affinity matrix.

    With ``symmetrize=True`` the affinity is first replaced by
    (A + A^T) / 2, which makes the result symmetric PSD.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("A must be square")
    if (A < 0).any():
        raise ValueError("affinity matrix must be nonnegative")
    if symmetrize:
        A = (A + A.T) / 2.0
    return np.diag(A.sum(axis=0)) - A


@dataclass
class AdamState:
    """First/second moment accumulators for Adam-style adaptive steps.

    Moments have the same shape as the parameter being stepped. Instances
    are single-owner mutable: `adam_step` advances them in place.
    """

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.m.shape != self.v.shape:
            raise ValueError("moment buffers must share a shape")
        if not (self.lr > 0 and 0 <= self.beta1 < 1 and 0 <= self.beta2 < 1
                and self.eps > 0):
            raise ValueError("invalid Adam hyperparameters")

    @classmethod
    def zeros(cls, shape, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(m=np.zeros(shape), v=np.zeros(shape), t=0, lr=lr,
                   beta1=beta1, beta2=beta2, eps=eps)


def adam_step(state: AdamState, grad: np.ndarray) -> tuple[AdamState, np.ndarray]:
    """Advance the Adam moments with `grad` and return the update step.

    The step is lr * mhat / (sqrt(vhat) + eps) with the usual bias
    corrections; subtract it from the parameter. `state` is mutated in
    place and returned for convenience.
    """
    grad = np.asarray(grad, dtype=float)
    if grad.shape != state.m.shape:
        raise ValueError("gradient shape does not match the Adam state")
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    mhat = state.m / (1.0 - state.beta1 ** state.t)
    vhat = state.v / (1.0 - state.beta2 ** state.t)
    step = state.lr * mhat / (np.sqrt(vhat) + state.eps)
    return state, step
