"""CP decomposition backends for the moment tensor.

Two routes:

* :func:`simdiag_decompose` — simultaneous diagonalization of two random
  third-mode projections; needs both hidden factors A and B to have full
  column rank.
* :func:`foobi_decompose` — the fourth-order route for the degenerate
  regime: only ``A kr B`` and C need full column rank, which covers
  rank-deficient transition matrices when d >= k.

Both normalize the A and B factor columns to be stochastic and push all
remaining column scales into C, so for HMM moment tensors C recovers
``O Diag(pi)`` directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConditionError, DegeneracyError, RankDeficiencyError, SplitError
from .stats import DEFAULT_RANK_TOL, MomentTensor, khatri_rao, matricize3


@dataclass
class CpFactors:
    """Rank-k CP factors with the column convention described above."""

    k: int
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    residual: float
    backend: str = ""

    def reconstruct(self) -> np.ndarray:
        return np.einsum("pi,qi,ri->pqr", self.A, self.B, self.C)


def _reconstruction_error(tensor: np.ndarray, A, B, C) -> float:
    return float(np.max(np.abs(tensor - np.einsum("pi,qi,ri->pqr", A, B, C))))


def _solve_C(tensor: np.ndarray, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    flat = tensor.reshape(A.shape[0] * B.shape[0], -1)
    C, *_ = np.linalg.lstsq(khatri_rao(A, B), flat, rcond=None)
    return C.T


# ---------------------------------------------------------------------------
# Simultaneous diagonalization
# ---------------------------------------------------------------------------

def simdiag_decompose(
    M: MomentTensor,
    rank_tol: float = DEFAULT_RANK_TOL,
    seed: int = 0,
    retries: int = 5,
    pair_tol: float = 1e-6,
    residual_tol: float = 1e-6,
) -> CpFactors:
    """Decompose via eigenstructure of two random third-mode projections.

    The two projected slices are first compressed to the rank-k subspaces of
    the mode-3 sum (the literal slice inverse does not exist: the slices are
    d^n x d^n of rank k). The A-side quotient ``M1 M2^-1`` and the transposed
    B-side quotient ``M2^T M1^-T`` share reciprocal eigenvalues, which drive
    the eigenvector pairing.

    Raises
    ------
    DegeneracyError
        Persistent eigenvalue collisions after ``retries`` re-randomizations,
        or significantly complex eigenvalues.
    ConditionError
        Rank-deficient quotients or a reconstruction residual above
        ``residual_tol`` — the FOOBI route may still apply.
    """
    tensor = M.M
    if tensor.shape[2] < 2:
        raise ValueError("third mode must have dimension >= 2")
    total = tensor.sum(axis=2)
    US, svals, VSt = np.linalg.svd(total)
    if svals.size == 0 or svals[0] <= 0:
        raise RankDeficiencyError("moment tensor is zero")
    k = int(np.sum(svals > rank_tol * svals[0]))
    P = US[:, :k]
    R = VSt[:k].T

    rng = np.random.default_rng(seed)
    collision = None
    for _ in range(retries + 1):
        v1 = rng.standard_normal(tensor.shape[2])
        v1 /= np.linalg.norm(v1)
        v2 = rng.standard_normal(tensor.shape[2])
        v2 /= np.linalg.norm(v2)
        M1 = P.T @ (tensor @ v1) @ R
        M2 = P.T @ (tensor @ v2) @ R

        s1 = np.linalg.svd(M1, compute_uv=False)
        s2 = np.linalg.svd(M2, compute_uv=False)
        if s1[-1] < 1e-12 * s1[0] or s2[-1] < 1e-12 * s2[0]:
            collision = ConditionError(
                "projected slices are rank deficient in the compressed subspace; "
                "the factors are likely rank deficient — try the FOOBI backend"
            )
            continue

        lams_a, vecs_a = np.linalg.eig(M1 @ np.linalg.inv(M2))
        # B-side: M2^T (M1^T)^-1 = B diag(c2/c1) B^-1, eigenvalues 1/lambda
        lams_b, vecs_b = np.linalg.eig(np.linalg.solve(M1, M2).T)
        scale = max(np.max(np.abs(lams_a)), 1.0)
        if max(np.max(np.abs(lams_a.imag)), np.max(np.abs(lams_b.imag))) > 1e-6 * scale:
            raise DegeneracyError(
                "projected quotient has significantly complex eigenvalues; "
                "the instance is numerically degenerate"
            )
        lams_a = lams_a.real
        lams_b = lams_b.real
        vecs_a = vecs_a.real
        vecs_b = vecs_b.real

        gaps = np.abs(lams_a[:, None] - lams_a[None, :])
        np.fill_diagonal(gaps, np.inf)
        if k > 1 and gaps.min() <= pair_tol * scale:
            collision = DegeneracyError(
                f"eigenvalue collision (gap {gaps.min():.3e}) persisted across retries"
            )
            continue

        # pair reciprocal eigenvalues: |lambda_i * mu_j - 1| minimal
        cost = np.abs(lams_a[:, None] * lams_b[None, :] - 1.0)
        pairing = cost.argmin(axis=1)
        if len(set(pairing.tolist())) != k or cost[np.arange(k), pairing].max() > pair_tol:
            collision = DegeneracyError(
                "reciprocal eigenvalue pairing is ambiguous; re-randomization exhausted"
            )
            continue

        A = P @ vecs_a
        B = R @ vecs_b[:, pairing]
        sums_a = A.sum(axis=0)
        sums_b = B.sum(axis=0)
        if np.min(np.abs(sums_a)) < 1e-12 or np.min(np.abs(sums_b)) < 1e-12:
            collision = DegeneracyError("factor column with vanishing sum")
            continue
        A = A / sums_a
        B = B / sums_b
        C = _solve_C(tensor, A, B)
        residual = _reconstruction_error(tensor, A, B, C)
        if residual > residual_tol:
            raise ConditionError(
                f"reconstruction residual {residual:.3e} exceeds {residual_tol:g}; "
                f"the factors are likely rank deficient — try the FOOBI backend"
            )
        return CpFactors(k=k, A=A, B=B, C=C, residual=residual, backend="simdiag")

    raise collision if collision is not None else DegeneracyError("decomposition failed")


# ---------------------------------------------------------------------------
# Joint diagonalization by congruence
# ---------------------------------------------------------------------------

_JD_SEED = 12345


def joint_diagonalize_congruence(
    mats: np.ndarray,
    max_sweeps: int = 200,
    threshold: float = 1e-12,
) -> tuple[np.ndarray, float]:
    """Find W with ``mats[i] = W Lambda_i W^T`` for symmetric mats[i].

    The diagonalizer is generally non-orthogonal, so plain orthogonal Jacobi
    cannot reach it from a cold start. A deterministic pencil initialization
    (generalized eigenvectors of two fixed-seed random combinations) is
    followed by Jacobi-type refinement sweeps alternating closed-form Givens
    and hyperbolic 2x2 updates that minimize the off-diagonal energy.

    Returns (W, residual) where the residual is the worst off-diagonal entry
    of ``W^-1 mats[i] W^-T`` relative to the diagonal scale.
    """
    mats = np.asarray(mats, float)
    m, k, _ = mats.shape
    if k == 1:
        return np.ones((1, 1)), 0.0

    rng = np.random.default_rng(_JD_SEED)
    V0 = None
    for _ in range(8):
        Ha = np.tensordot(rng.standard_normal(m), mats, axes=1)
        Hb = np.tensordot(rng.standard_normal(m), mats, axes=1)
        sb = np.linalg.svd(Hb, compute_uv=False)
        if sb[-1] < 1e-10 * max(sb[0], 1e-300):
            continue
        lams, X = np.linalg.eig(np.linalg.solve(Hb, Ha))
        if np.max(np.abs(lams.imag)) > 1e-8 * max(1.0, np.max(np.abs(lams))):
            continue
        X = X.real
        if np.linalg.cond(X) > 1e10:
            continue
        # columns of X span W^-T up to per-column scale, so X^T diagonalizes
        V0 = X.T
        break
    if V0 is None:
        raise DegeneracyError("no real simultaneous congruence diagonalizer found")

    V, residual = _jacobi_congruence_refine(mats, V0, max_sweeps, threshold)
    return np.linalg.inv(V), residual


def _offdiag_residual(D: np.ndarray) -> float:
    k = D.shape[1]
    mask = ~np.eye(k, dtype=bool)
    off = np.max(np.abs(D[:, mask])) if k > 1 else 0.0
    scale = max(np.max(np.abs(D)), 1e-300)
    return float(off / scale)


def _jacobi_congruence_refine(mats, V0, max_sweeps, threshold):
    V = np.asarray(V0, float).copy()
    D = np.einsum("ia,lab,jb->lij", V, mats, V)
    k = D.shape[1]

    def rotate(i, j, t11, t12, t21, t22):
        Di, Dj = D[:, i, :].copy(), D[:, j, :].copy()
        D[:, i, :] = t11 * Di + t12 * Dj
        D[:, j, :] = t21 * Di + t22 * Dj
        Di, Dj = D[:, :, i].copy(), D[:, :, j].copy()
        D[:, :, i] = t11 * Di + t12 * Dj
        D[:, :, j] = t21 * Di + t22 * Dj
        Vi, Vj = V[i].copy(), V[j].copy()
        V[i] = t11 * Vi + t12 * Vj
        V[j] = t21 * Vi + t22 * Vj

    for _ in range(max_sweeps):
        largest = 0.0
        for i in range(k - 1):
            for j in range(i + 1, k):
                a = D[:, i, i]
                b = D[:, j, j]
                c = D[:, i, j]
                # Givens: c' = c cos(2t) - (a-b)/2 sin(2t); minimize sum c'^2
                g = (a - b) / 2.0
                G2 = np.array([[c @ c, -(c @ g)], [-(c @ g), g @ g]])
                evals, evecs = np.linalg.eigh(G2)
                cos2t, sin2t = evecs[:, 0]
                if cos2t < 0:
                    cos2t, sin2t = -cos2t, -sin2t
                ct = np.sqrt((1.0 + cos2t) / 2.0)
                st = sin2t / (2.0 * ct)
                if abs(st) > 1e-16:
                    rotate(i, j, ct, st, -st, ct)
                    largest = max(largest, abs(st))
                # hyperbolic: c' = c cosh(2y) + (a+b)/2 sinh(2y)
                a = D[:, i, i]
                b = D[:, j, j]
                c = D[:, i, j]
                h = (a + b) / 2.0
                denom = c @ c + h @ h
                if denom > 1e-300:
                    tanh4 = -2.0 * (c @ h) / denom
                    tanh4 = np.clip(tanh4, -1 + 1e-15, 1 - 1e-15)
                    y = np.arctanh(tanh4) / 4.0
                    if abs(y) > 1e-16:
                        ch, sh = np.cosh(y), np.sinh(y)
                        rotate(i, j, ch, sh, sh, ch)
                        largest = max(largest, abs(sh))
        if largest < threshold:
            break
    return V, _offdiag_residual(D)


# ---------------------------------------------------------------------------
# FOOBI
# ---------------------------------------------------------------------------

def rank_one_kr_factor(col: np.ndarray, p: int, q: int) -> tuple[np.ndarray, np.ndarray, float]:
    """Split a Khatri-Rao column into its rank-one factors.

    Reshapes to p x q, takes the leading singular pair, and reports
    ``sigma_2 / sigma_1`` as the split residual (0 for an exact product).
    The factor pair is returned up to a common sign/scale.
    """
    col = np.asarray(col, float)
    if col.shape != (p * q,):
        raise ValueError(f"expected a length-{p * q} vector")
    X = col.reshape(p, q)
    U, s, Vt = np.linalg.svd(X)
    if s[0] <= 0:
        raise DegeneracyError("zero column cannot be split into rank-one factors")
    a = U[:, 0] * np.sqrt(s[0])
    b = Vt[0] * np.sqrt(s[0])
    if a.sum() < 0 and b.sum() < 0:
        a, b = -a, -b
    residual = float(s[1] / s[0]) if s.size > 1 else 0.0
    return a, b, residual


def _foobi_kernel_map(E: np.ndarray, p: int, q: int) -> tuple[np.ndarray, list]:
    """Linear map whose kernel encodes the symmetric coefficient matrices H.

    Column (r, s) holds vec(P^(r,s)) of the symmetrized fourth-order product
    of slices r and s (doubled off the diagonal so coefficients read directly
    as entries of a symmetric H).
    """
    k = E.shape[1]
    slices = E.T.reshape(k, p, q)
    pairs = [(r, s) for r in range(k) for s in range(r, k)]
    columns = np.empty((p * p * q * q, len(pairs)))
    for col_idx, (r, s) in enumerate(pairs):
        X, Y = slices[r], slices[s]
        block = (
            np.einsum("ac,bd->abcd", X, Y)
            + np.einsum("ac,bd->abcd", Y, X)
            - np.einsum("ad,bc->abcd", X, Y)
            - np.einsum("ad,bc->abcd", Y, X)
        )
        if r != s:
            block = 2.0 * block
        columns[:, col_idx] = block.ravel()
    return columns, pairs


def foobi_decompose(
    M: MomentTensor,
    tol: float = DEFAULT_RANK_TOL,
    expected_k: int | None = None,
    max_sweeps: int = 200,
    jd_threshold: float = 1e-12,
) -> CpFactors:
    """Fourth-order decomposition for the degenerate regime.

    Steps: SVD of the mode-3 matricization gives ``E`` spanning
    ``col(A kr B)`` and ``F`` spanning ``col(C)``; the k-dimensional kernel
    of the symmetrized fourth-order products of E's slices yields a basis
    ``H_i = W Lambda_i W^T``; joint congruence diagonalization recovers W;
    then ``A kr B = E W`` splits column-wise into rank-one factors and
    ``C = F W^-T`` (rescaled so A, B are column stochastic).

    Raises
    ------
    ConditionError
        Kernel dimension differs from k, or the detected rank differs from
        ``expected_k`` — the operational "no" of the degenerate-class check.
    DegeneracyError
        Joint diagonalization residual above ``tol``.
    SplitError
        A Khatri-Rao column fails to split within ``tol``.
    """
    tensor = M.M
    p, q, _ = tensor.shape
    flat = matricize3(tensor)
    U, svals, Vt = np.linalg.svd(flat, full_matrices=False)
    if svals.size == 0 or svals[0] <= 0:
        raise RankDeficiencyError("moment tensor is zero")
    k = int(np.sum(svals > tol * svals[0]))
    if expected_k is not None and k != expected_k:
        raise ConditionError(
            f"matricization has numeric rank {k}, expected {expected_k}: "
            f"A kr B or C is column rank deficient"
        )
    root = np.sqrt(svals[:k])
    E = U[:, :k] * root
    F = Vt[:k].T * root

    kernel_map, pairs = _foobi_kernel_map(E, p, q)
    _, msv, mvt = np.linalg.svd(kernel_map, full_matrices=False)
    # the map's natural scale is sigma_1 of the matricization (entries of the
    # P tensors are products of two E entries); guard against an all-kernel
    # map whose own top singular value is already numerical noise
    scale = max(msv[0], float(svals[0]))
    null_mask = msv <= tol * scale
    null_dim = int(np.sum(null_mask))
    if null_dim != k:
        raise ConditionError(
            f"kernel of the fourth-order constraint system has dimension "
            f"{null_dim}, expected {k}: uniqueness condition fails"
        )
    basis = np.empty((k, k, k))
    null_vecs = mvt[len(msv) - null_dim :]
    for i, vec in enumerate(null_vecs):
        H = np.zeros((k, k))
        for coeff, (r, s) in zip(vec, pairs):
            H[r, s] = coeff
            H[s, r] = coeff
        basis[i] = H

    W, jd_residual = joint_diagonalize_congruence(
        basis, max_sweeps=max_sweeps, threshold=jd_threshold
    )
    if jd_residual > tol:
        raise DegeneracyError(
            f"joint diagonalization residual {jd_residual:.3e} exceeds {tol:g}"
        )

    KR = E @ W
    C = F @ np.linalg.inv(W).T
    A = np.empty((p, k))
    B = np.empty((q, k))
    for i in range(k):
        a, b, split_residual = rank_one_kr_factor(KR[:, i], p, q)
        if split_residual > tol:
            raise SplitError(
                f"column {i} split residual {split_residual:.3e} exceeds {tol:g}"
            )
        sa, sb = a.sum(), b.sum()
        if abs(sa) < 1e-12 or abs(sb) < 1e-12:
            raise SplitError(f"column {i} has a factor with vanishing sum")
        A[:, i] = a / sa
        B[:, i] = b / sb
        C[:, i] *= sa * sb
    residual = _reconstruction_error(tensor, A, B, C)
    return CpFactors(k=k, A=A, B=B, C=C, residual=residual, backend="foobi")
