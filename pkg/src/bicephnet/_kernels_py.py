"""Numpy implementations of the hot loops. Used when the extension is absent.

Distances accumulate squared differences one feature at a time, in feature
order, exactly like the compiled loop, so both backends produce bit-identical
distance matrices and therefore identical mined triplets.
"""
import numpy as np

BACKEND = "python"


def _sq_accumulate(A, Bm):
    acc = np.zeros((A.shape[0], Bm.shape[0]))
    for k in range(A.shape[1]):
        t = A[:, k][:, None] - Bm[:, k][None, :]
        acc += t * t
    return acc


def pairwise_distances(X):
    X = np.ascontiguousarray(X, dtype=np.float64)
    D = np.sqrt(np.maximum(_sq_accumulate(X, X), 0.0))
    # enforce exact symmetry and a zero diagonal
    iu = np.triu_indices(X.shape[0], 1)
    D.T[iu] = D[iu]
    np.fill_diagonal(D, 0.0)
    return D


def cross_distances(A, Q):
    """Distances from every query row (rows of Q) to every row of A: shape (len(Q), len(A))."""
    A = np.ascontiguousarray(A, dtype=np.float64)
    Q = np.ascontiguousarray(Q, dtype=np.float64)
    return np.sqrt(np.maximum(_sq_accumulate(Q, A), 0.0))


def semihard_triples(D, groups, margin):
    """All (anchor, positive, negative) with d(a,p) < d(a,n) < d(a,p) + margin.

    Positives share the group id with the anchor, negatives do not. Output is
    sorted lexicographically by (anchor, positive, negative).
    """
    D = np.asarray(D, dtype=np.float64)
    g = np.asarray(groups, dtype=np.int64)
    B = D.shape[0]
    same = g[:, None] == g[None, :]
    pos = same & ~np.eye(B, dtype=bool)
    neg = ~same
    d_ap = D[:, :, None]
    d_an = D[:, None, :]
    band = (d_ap < d_an) & (d_an < d_ap + margin)
    mask = band & pos[:, :, None] & neg[:, None, :]
    return np.argwhere(mask).astype(np.int64).reshape(-1, 3)


def triplet_hinge(X, D, triples, margin):
    """Mean hinge ``max(0, d(a,p) - d(a,n) + margin)`` over triples and its gradient w.r.t. X."""
    X = np.asarray(X, dtype=np.float64)
    grad = np.zeros_like(X)
    T = len(triples)
    if T == 0:
        return 0.0, grad
    a, p, n = triples[:, 0], triples[:, 1], triples[:, 2]
    d_ap = D[a, p]
    d_an = D[a, n]
    hinge = d_ap - d_an + margin
    active = hinge > 0.0
    loss = float(np.sum(np.where(active, hinge, 0.0)) / T)
    if not np.any(active):
        return loss, grad
    a, p, n = a[active], p[active], n[active]
    d_ap, d_an = d_ap[active], d_an[active]
    scale = 1.0 / T
    # d(a,p) == 0 takes the zero subgradient
    inv_ap = np.divide(scale, d_ap, out=np.zeros_like(d_ap), where=d_ap > 0.0)
    inv_an = scale / d_an
    u_ap = (X[a] - X[p]) * inv_ap[:, None]
    u_an = (X[a] - X[n]) * inv_an[:, None]
    np.add.at(grad, a, u_ap - u_an)
    np.add.at(grad, p, -u_ap)
    np.add.at(grad, n, u_an)
    return loss, grad
