"""Central-subspace estimation for the propensity score by MAVE.

The minimum average variance estimator alternates between per-anchor local
linear fits of ``D`` on the reduced index ``V'X`` and a global weighted least
squares update of ``V``. Kernel weights are recomputed from the current ``V``
at every sweep.
"""

from dataclasses import dataclass, field

import numpy as np

from .kernels import KernelSpec, univariate

RIDGE = 1e-8


@dataclass
class MaveResult:
    V: np.ndarray
    converged: bool
    n_iter: int
    objective: list = field(default_factory=list)
    stalled: bool = False

    @property
    def k(self):
        return self.V.shape[0]

    @property
    def r(self):
        return self.V.shape[1]


@dataclass
class AffiliationResult:
    t: int
    residuals: np.ndarray
    tolerance: float
    rule: str = "residual norm of (I - VV')e_j below tolerance"


def orthonormalize(V):
    """Thin QR with a deterministic sign: each column's largest entry is positive."""
    V = np.asarray(V, dtype=float)
    if V.ndim == 1:
        V = V[:, None]
    if V.shape[1] > V.shape[0]:
        raise ValueError(f"projection has more columns ({V.shape[1]}) than rows ({V.shape[0]})")
    Q, _ = np.linalg.qr(V)
    idx = np.argmax(np.abs(Q), axis=0)
    signs = np.sign(Q[idx, np.arange(Q.shape[1])])
    signs[signs == 0] = 1.0
    return Q * signs


def projector(V):
    V = np.asarray(V, dtype=float)
    if V.ndim == 1:
        V = V[:, None]
    return V @ V.T


def subspace_distance(A, B):
    """Frobenius distance between the orthogonal projectors onto span(A), span(B)."""
    return float(np.linalg.norm(projector(A) - projector(B)))


def affiliation_count(V_hat, l, tolerance=0.05, z_cols=None):
    """Count the Z coordinates of X lying in span(V_hat).

    Z is taken to be the leading ``l`` coordinates unless ``z_cols`` says
    otherwise.
    """
    V = np.asarray(V_hat, dtype=float)
    if V.ndim == 1:
        V = V[:, None]
    k = V.shape[0]
    if not 0 <= l <= k:
        raise ValueError(f"l={l} must lie in [0, {k}]")
    cols = list(range(l)) if z_cols is None else list(z_cols)
    if len(cols) != l:
        raise ValueError("z_cols must have length l")
    P = projector(V)
    E = np.eye(k)[:, cols]
    residuals = np.linalg.norm(E - P @ E, axis=0)
    return AffiliationResult(t=int(np.sum(residuals < tolerance)), residuals=residuals,
                             tolerance=tolerance)


def _weights(U, kernel, h, normalize=True):
    """W[j, i] = H_h(U_i - U_j), optionally normalised over i for each anchor j."""
    W = np.ones((U.shape[0], U.shape[0]))
    for c in range(U.shape[1]):
        W *= univariate(kernel.order, (U[None, :, c] - U[:, None, c]) / h)
    if normalize:
        W /= W.sum(axis=1, keepdims=True)
    return W


def _centered_moments(W, U):
    """Per-anchor sums for local linear fits around each U_j.

    Returns ``w_j = sum_i W_ji``, ``d_j = sum_i W_ji (U_i - U_j)`` and
    ``S_j = sum_i W_ji (U_i - U_j)(U_i - U_j)'``.
    """
    n, q = U.shape
    w = W.sum(axis=1)
    m = W @ U
    second = (W @ (U[:, :, None] * U[:, None, :]).reshape(n, q * q)).reshape(n, q, q)
    S = (second - m[:, :, None] * U[:, None, :] - U[:, :, None] * m[:, None, :]
         + w[:, None, None] * U[:, :, None] * U[:, None, :])
    d = m - w[:, None] * U
    return w, d, S


def _local_linear(W, U, y):
    """Solve every anchor's weighted least squares for (intercept, slope)."""
    n, q = U.shape
    w, d, S = _centered_moments(W, U)
    M = np.empty((n, q + 1, q + 1))
    M[:, 0, 0] = w
    M[:, 0, 1:] = d
    M[:, 1:, 0] = d
    M[:, 1:, 1:] = S
    g0 = W @ y
    g1 = W @ (y[:, None] * U) - g0[:, None] * U
    rhs = np.concatenate([g0[:, None], g1], axis=1)
    M_reg = M + RIDGE * np.eye(q + 1)
    theta = np.linalg.solve(M_reg, rhs[:, :, None])[:, :, 0]
    return theta, M, rhs


def _profile(D, X, V, kernel, h):
    """Objective minimised over (a, b) for fixed V, with V-dependent weights."""
    U = X @ V
    W = _weights(U, kernel, h)
    theta, M, rhs = _local_linear(W, U, D)
    yy = W @ (D * D)
    obj = yy - 2.0 * np.einsum("ja,ja->j", theta, rhs) + np.einsum("ja,jab,jb->j", theta, M, theta)
    return float(np.sum(obj)), theta, W


def _v_step(D, X, W, theta, r):
    """Global weighted least squares for vec(V) given per-anchor (a_j, b_j)."""
    n, k = X.shape
    a, B = theta[:, 0], theta[:, 1:]
    w, dX, S = _centered_moments(W, X)
    g0 = W @ D
    gX = W @ (D[:, None] * X) - g0[:, None] * X
    c = gX - a[:, None] * dX
    A = np.einsum("ja,jb,jpq->apbq", B, B, S).reshape(r * k, r * k)
    rhs = np.einsum("ja,jp->ap", B, c).reshape(r * k)
    scale = max(np.trace(A) / (r * k), 1.0)
    sol = np.linalg.solve(A + RIDGE * scale * np.eye(r * k), rhs)
    return sol.reshape(r, k).T


def _align(V_new, V_ref):
    """Rotate V_new's basis to best match V_ref (orthogonal Procrustes)."""
    u, _, vt = np.linalg.svd(V_new.T @ V_ref)
    return V_new @ (u @ vt)


def init_directions(D, X, kernel=None, h=None, r=1):
    """Outer-product-of-gradients starting directions.

    Local linear slopes of D on standardised X at every anchor; the top ``r``
    eigenvectors of their averaged outer product, mapped back to the original
    scale. Falls back to the leading principal components of X when the slopes
    vanish (e.g. constant D).
    """
    D = np.asarray(D, dtype=float)
    X = np.asarray(X, dtype=float)
    n, k = X.shape
    if not 1 <= r <= k:
        raise ValueError(f"r={r} must lie in [1, {k}]")
    if kernel is None:
        kernel = KernelSpec(order=2, dim=k)
    if h is None:
        h = default_opg_bandwidth(n, k)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    Xs = (X - X.mean(axis=0)) / sd
    W = _weights(Xs, kernel.with_dim(k), h)
    theta, _, _ = _local_linear(W, Xs, D)
    B = theta[:, 1:] / sd
    G = B.T @ B / n
    if not np.all(np.isfinite(G)) or np.trace(G) < 1e-12:
        Xc = X - X.mean(axis=0)
        _, _, vt = np.linalg.svd(Xc, full_matrices=False)
        return orthonormalize(vt[:r].T), True
    vals, vecs = np.linalg.eigh(G)
    return orthonormalize(vecs[:, ::-1][:, :r]), False


def default_opg_bandwidth(n, k):
    # normal-reference rate on standardised covariates
    return 1.5 * n ** (-1.0 / (k + 4))


def mave_fit(D, X, r, kernel=None, h2=None, max_iter=50, tol=1e-6, V0=None):
    """Estimate an orthonormal basis V (k x r) of the central subspace of D given X.

    Each sweep computes per-anchor (a_j, b_j) for the current V, then solves the
    global least squares problem for V with those coefficients and the current
    weights. The candidate is accepted only if it lowers the profiled
    objective; otherwise it is shrunk towards the current V by step halving,
    so the recorded objective never increases.
    """
    D = np.asarray(D, dtype=float)
    X = np.asarray(X, dtype=float)
    n, k = X.shape
    if not 1 <= r <= k:
        raise ValueError(f"r={r} must lie in [1, {k}]")
    if n <= k + r:
        raise ValueError(f"need more than k + r = {k + r} observations, got {n}")
    if kernel is None:
        kernel = KernelSpec(order=2, dim=r)
    kernel = kernel.with_dim(r)
    if h2 is None:
        raise ValueError("a MAVE bandwidth h2 is required")
    if r == k:
        return MaveResult(V=np.eye(k), converged=True, n_iter=0, objective=[])

    if V0 is None:
        V0, _ = init_directions(D, X, r=r)
    V = orthonormalize(V0)
    F, theta, W = _profile(D, X, V, kernel, h2)
    history = [F]
    converged = stalled = False
    it = 0
    for it in range(1, max_iter + 1):
        cand = _v_step(D, X, W, theta, r)
        if not np.all(np.isfinite(cand)) or np.linalg.norm(cand) < 1e-12:
            stalled = converged = True
            break
        cand = _align(orthonormalize(cand), V)
        step = 1.0
        accepted = None
        for _ in range(12):
            trial = orthonormalize(V + step * (cand - V)) if step < 1.0 else cand
            F_new, theta_new, W_new = _profile(D, X, trial, kernel, h2)
            if F_new <= F:
                accepted = trial
                break
            step *= 0.5
        if accepted is None:
            stalled = converged = True
            break
        move = subspace_distance(V, accepted)
        V, F, theta, W = accepted, F_new, theta_new, W_new
        history.append(F)
        if move < tol:
            converged = True
            break
    return MaveResult(V=orthonormalize(V), converged=converged, n_iter=it, objective=history,
                      stalled=stalled)
