"""Clustering-based evaluation and structural diagnostics.

Selected features are judged by clustering the (imputed) data restricted
to them: repeated seeded k-means, accuracy under the best label matching,
and normalized mutual information. `diagnostics_report` additionally
checks the structural guarantees the optimizer is designed around:
cluster separation of the imputed data and similarity-driven consistency
bounds, with violation counts and margins.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from climfs import numkit
from climfs.dataset import MaskMatrix, MultiViewDataset

# Numeric slack for the diagnostic bound checks.
BOUND_TOL = 1e-9


# ---------------------------------------------------------------- k-means


def _kmeanspp_centers(X: np.ndarray, c: int,
                      rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: each next center drawn with probability
    proportional to squared distance from the chosen set."""
    n = X.shape[0]
    centers = np.empty((c, X.shape[1]))
    first = int(rng.integers(n))
    centers[0] = X[first]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for t in range(1, c):
        total = d2.sum()
        if total <= 0.0:
            pick = int(rng.integers(n))
        else:
            pick = int(rng.choice(n, p=d2 / total))
        centers[t] = X[pick]
        d2 = np.minimum(d2, np.sum((X - centers[t]) ** 2, axis=1))
    return centers


def kmeans(X: np.ndarray, c: int, seed: int = 0, max_iter: int = 300,
           return_history: bool = False):
    """Lloyd's algorithm with k-means++ seeding from an explicit seed.

    Ties in assignment go to the lowest cluster index; a cluster left
    empty is re-seeded at the point farthest from its current center.
    Returns the labels, plus the per-iteration within-cluster
    sum-of-squares history when `return_history` is set (the history is
    non-increasing).
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be 2-D (samples x features)")
    n = X.shape[0]
    if not 1 <= c <= n:
        raise ValueError(f"need 1 <= c <= n, got c={c}, n={n}")
    rng = np.random.default_rng(seed)
    centers = _kmeanspp_centers(X, c, rng)
    labels = np.zeros(n, dtype=int)
    history = []
    for _ in range(max_iter):
        d2 = np.sum((X[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        new_labels = np.argmin(d2, axis=1)
        for cl in range(c):
            members = new_labels == cl
            if members.any():
                centers[cl] = X[members].mean(axis=0)
            else:
                # Re-seeding an empty cluster at the farthest point leaves
                # the current assignment cost unchanged, so the WCSS
                # history stays monotone.
                far = int(np.argmax(np.min(d2, axis=1)))
                centers[cl] = X[far]
        wcss = float(np.sum((X - centers[new_labels]) ** 2))
        history.append(wcss)
        if np.array_equal(new_labels, labels) and len(history) > 1:
            break
        labels = new_labels
    if return_history:
        return labels, np.array(history)
    return labels


# ----------------------------------------------------------- ACC and NMI


def _contingency(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    pred = np.asarray(pred).reshape(-1)
    truth = np.asarray(truth).reshape(-1)
    if pred.shape[0] != truth.shape[0]:
        raise ValueError("label vectors differ in length")
    _, pi = np.unique(pred, return_inverse=True)
    _, ti = np.unique(truth, return_inverse=True)
    C = np.zeros((pi.max() + 1, ti.max() + 1), dtype=np.int64)
    np.add.at(C, (pi, ti), 1)
    return C


def clustering_accuracy(pred, truth) -> float:
    """Fraction of samples matched under the best bijection between
    predicted and true labels (maximum-weight matching on the
    contingency table, padded square when class counts differ)."""
    C = _contingency(pred, truth)
    side = max(C.shape)
    pad = np.zeros((side, side), dtype=np.int64)
    pad[:C.shape[0], :C.shape[1]] = C
    rows, cols = linear_sum_assignment(-pad)
    return float(pad[rows, cols].sum()) / float(C.sum())


def nmi(pred, truth) -> float:
    """Normalized mutual information with geometric-mean normalization,
    I / sqrt(H(pred) H(truth)), natural log internally.

    Conventions for degenerate labelings: both constant -> 1.0 (identical
    trivial partitions); exactly one constant -> 0.0 (it carries no
    information about the other).
    """
    C = _contingency(pred, truth).astype(float)
    n = C.sum()
    pj = C.sum(axis=1) / n
    tj = C.sum(axis=0) / n
    hp = -float(np.sum(pj[pj > 0] * np.log(pj[pj > 0])))
    ht = -float(np.sum(tj[tj > 0] * np.log(tj[tj > 0])))
    if hp == 0.0 and ht == 0.0:
        return 1.0
    if hp == 0.0 or ht == 0.0:
        return 0.0
    P = C / n
    mask = P > 0
    outer = pj[:, None] * tj[None, :]
    info = float(np.sum(P[mask] * np.log(P[mask] / outer[mask])))
    return info / np.sqrt(hp * ht)


# ----------------------------------------------------------- selection eval


@dataclass
class EvalReport:
    """Repeated-k-means clustering quality of a feature selection."""

    acc_mean: float
    nmi_mean: float
    acc_runs: list[float]
    nmi_runs: list[float]
    runs: int
    seed: int
    feature_ratio: float

    def to_dict(self) -> dict:
        return {"acc_mean": self.acc_mean, "nmi_mean": self.nmi_mean,
                "acc_runs": self.acc_runs, "nmi_runs": self.nmi_runs,
                "runs": self.runs, "seed": self.seed,
                "feature_ratio": self.feature_ratio}


def evaluate_selection(ds: MultiViewDataset, sel, c: int, runs: int = 50,
                       seed: int = 0) -> EvalReport:
    """Cluster the samples on the selected features (concatenated across
    views) `runs` times with seeds seed..seed+runs-1 and report per-run
    and mean ACC/NMI against the dataset labels.

    The caller decides which data to evaluate on; passing a dataset built
    from imputed views scores the method's own imputation.
    """
    if ds.labels is None:
        raise ValueError("dataset has no labels to evaluate against")
    parts = [view[idx, :].T for view, idx in zip(ds.views, sel.selected)]
    X = np.hstack(parts)
    if X.shape[1] == 0:
        raise ValueError("selection keeps no features")
    acc_runs, nmi_runs = [], []
    for r in range(runs):
        labels = kmeans(X, c, seed=seed + r)
        acc_runs.append(clustering_accuracy(labels, ds.labels))
        nmi_runs.append(nmi(labels, ds.labels))
    return EvalReport(acc_mean=float(np.mean(acc_runs)),
                      nmi_mean=float(np.mean(nmi_runs)),
                      acc_runs=acc_runs, nmi_runs=nmi_runs, runs=runs,
                      seed=seed, feature_ratio=sel.ratio)


# -------------------------------------------------------------- diagnostics


def _normalized_columns(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(X, axis=0)
    safe = np.where(norms == 0.0, 1.0, norms)
    return X / safe, safe


def _missing_samples(mask: np.ndarray) -> np.ndarray:
    """Indices of samples with at least one masked entry in this view."""
    return np.where((mask == 0.0).any(axis=0))[0]


def _cluster_separation(state, masks: MaskMatrix) -> list[dict]:
    """Per view: imputed same-cluster pairs (identical consensus rows)
    must sit within mu = sigma_max ||F^v||_1 / 2 + 1 of each other, and
    cross-cluster pairs at least nu = sigma_min (delta - ||F^v||_1)/2 - 1
    apart, whenever ||F^v||_1 < (sigma_min delta - 4)/(sigma_min +
    sigma_max) holds for the pair (delta is that pair's consensus row
    distance). Distances are taken on column-normalized imputed data, the
    scaling under which the bounds are stated.
    """
    out = []
    F = state.Fstar
    for v in range(state.n_views):
        sv = np.linalg.svd(state.W[v], compute_uv=False)
        smax, smin = float(sv[0]), float(sv[-1])
        fv1 = float(np.abs(state.Fv[v]).sum())
        mu = 0.5 * smax * fv1 + 1.0
        idx = _missing_samples(masks.masks[v])
        rec = {"view": v, "sigma_max": smax, "sigma_min": smin,
               "fv_l1": fv1, "mu": mu, "imputed_samples": int(idx.size),
               "same_pairs": 0, "same_violations": 0, "cross_pairs": 0,
               "premise_pairs": 0, "cross_violations": 0,
               "premise_status": "no imputed pairs"}
        if idx.size >= 2:
            Xn, _ = _normalized_columns(state.Xhat[v])
            D = np.sqrt(np.maximum(
                _sq_dists_cols(Xn[:, idx]), 0.0))
            rows = F[idx]
            same = (rows[:, None, :] == rows[None, :, :]).all(axis=2)
            delta = np.sqrt(np.maximum(_sq_dists_rows(rows), 0.0))
            iu = np.triu_indices(idx.size, k=1)
            same_u = same[iu]
            dist_u = D[iu]
            delta_u = delta[iu]
            rec["same_pairs"] = int(same_u.sum())
            rec["same_violations"] = int(
                np.sum(dist_u[same_u] > mu + BOUND_TOL))
            cross = ~same_u
            rec["cross_pairs"] = int(cross.sum())
            premise = cross & (fv1 * (smin + smax) < smin * delta_u - 4.0)
            rec["premise_pairs"] = int(premise.sum())
            nu = 0.5 * smin * (delta_u - fv1) - 1.0
            rec["cross_violations"] = int(
                np.sum(dist_u[premise] < nu[premise] - BOUND_TOL))
            if rec["cross_pairs"] == 0:
                rec["premise_status"] = "no cross-cluster pairs"
            elif rec["premise_pairs"] == 0:
                rec["premise_status"] = "premise unmet"
            else:
                rec["premise_status"] = (
                    f"premise held for {rec['premise_pairs']}/"
                    f"{rec['cross_pairs']} cross-cluster pairs")
        out.append(rec)
    return out


def _sq_dists_cols(X: np.ndarray) -> np.ndarray:
    sq = np.einsum("ij,ij->j", X, X)
    return sq[:, None] + sq[None, :] - 2.0 * (X.T @ X)


def _sq_dists_rows(R: np.ndarray) -> np.ndarray:
    return _sq_dists_cols(R.T)


def _neighbor_consistency(state, masks: MaskMatrix, rho: float) -> list[dict]:
    """Per view: for imputed samples i with a strong imputed neighbor j
    (directed weight S^v_ji >= rho), the column-normalized distance must
    stay below 3/2 - rho + ||c_i||/2, where c_i is the reconstruction
    W^v (F^v_i + F*_i) of sample i under the same column scaling."""
    out = []
    for v in range(state.n_views):
        idx = _missing_samples(masks.masks[v])
        rec = {"view": v, "rho": rho, "pairs": 0, "violations": 0,
               "min_margin": None}
        if idx.size >= 2:
            Xn, scale = _normalized_columns(state.Xhat[v])
            C = state.W[v] @ (state.Fv[v] + state.Fstar).T
            cnorm = np.linalg.norm(C, axis=0) / scale
            D = np.sqrt(np.maximum(_sq_dists_cols(Xn[:, idx]), 0.0))
            Ssub = state.S[v][np.ix_(idx, idx)]
            omega1 = 1.5 - rho + 0.5 * cnorm[idx]
            strong = Ssub >= rho
            np.fill_diagonal(strong, False)
            jj, ii = np.where(strong)     # row = neighbor, column = target
            margins = omega1[ii] - D[jj, ii]
            rec["pairs"] = int(ii.size)
            rec["violations"] = int(np.sum(margins < -BOUND_TOL))
            if ii.size:
                rec["min_margin"] = float(margins.min())
        out.append(rec)
    return out


def _consensus_value(state, cfg) -> float:
    """Value of the consensus-factor subproblem (reconstruction plus the
    consensus-graph smoothness trace) at the current state. The trace is
    computed through the symmetrized Laplacian, the form under which it
    equals half the similarity-weighted sum of squared row gaps."""
    total = 0.0
    for v in range(state.n_views):
        R = state.Xhat[v] - state.W[v] @ (state.Fv[v] + state.Fstar).T
        total += float(np.sum(R * R))
    L = numkit.laplacian(state.H, symmetrize=True)
    total += float(np.sum(state.Fstar * (L @ state.Fstar)))
    return total


def _cross_view_pairs(masks: MaskMatrix) -> np.ndarray:
    """Boolean (n, n) matrix: samples i and j both carry missing entries,
    in views that are not the same single view for both."""
    miss = np.stack([(m == 0.0).any(axis=0) for m in masks.masks])  # (V, n)
    any_missing = miss.any(axis=0)
    n = miss.shape[1]
    ok = np.zeros((n, n), dtype=bool)
    for i in range(n):
        if not any_missing[i]:
            continue
        vi = np.where(miss[:, i])[0]
        for j in range(n):
            if j == i or not any_missing[j]:
                continue
            vj = np.where(miss[:, j])[0]
            if vi.size > 1 or vj.size > 1 or vi[0] != vj[0]:
                ok[i, j] = True
    return ok


def _consensus_consistency(state, masks: MaskMatrix, cfg,
                           zetas: tuple[float, ...]) -> dict:
    """Consensus-factor rows of strongly fused cross-view pairs must obey
    ||F*_i - F*_j||^2 <= 2 J / zeta, J the consensus subproblem value; a
    pair qualifies when either directed weight H_ij or H_ji reaches zeta."""
    J = _consensus_value(state, cfg)
    gap2 = _sq_dists_rows(state.Fstar)
    Hmax = np.maximum(state.H, state.H.T)
    eligible = _cross_view_pairs(masks)
    checks = []
    for zeta in zetas:
        sel = eligible & (Hmax >= zeta)   # symmetric by construction
        iu = np.triu_indices(state.n_samples, k=1)
        mask_u = sel[iu]
        bound = 2.0 * J / zeta
        viol = int(np.sum(gap2[iu][mask_u] > bound + BOUND_TOL))
        checks.append({"zeta": zeta, "pairs": int(mask_u.sum()),
                       "bound": bound, "violations": viol})
    return {"subproblem_value": J, "checks": checks}


def diagnostics_report(state, masks: MaskMatrix, cfg, rho: float = 0.1,
                       zetas: tuple[float, ...] = (0.1, 0.2)) -> dict:
    """Structural diagnostics of a fitted state, JSON-ready.

    Sections: `cluster_separation` (imputed same-cluster pairs close,
    cross-cluster pairs far, with per-pair premise tracking),
    `neighbor_consistency` (strong within-view similarity keeps imputed
    columns close), and `consensus_consistency` (strong consensus
    similarity keeps consensus-factor rows close). Violation counts are
    expected to be zero wherever the stated premises hold.
    """
    return {"cluster_separation": _cluster_separation(state, masks),
            "neighbor_consistency": _neighbor_consistency(state, masks, rho),
            "consensus_consistency": _consensus_consistency(
                state, masks, cfg, tuple(zetas))}
