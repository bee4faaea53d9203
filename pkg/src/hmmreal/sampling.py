"""Sequence simulation, empirical table estimation, and the matrix
perturbation inequalities used by the stability analysis.

The estimation model matches the analyzed regime: T independent sequences,
one window read from the head of each, so table entries are i.i.d. frequency
averages. A sliding-window estimator over one long sequence is provided for
realistic data but sits outside that independence assumption.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .models import Hmm, QuasiHmm, fit_intertwiner
from .realize import RealizationDiagnostics, realize_quasi, verify_realization
from .stats import JointTable, build_hankel, check_capacity


@dataclass
class SampleBatch:
    """T independent sequences emitted by one model, letters 1-based."""

    d: int
    length: int
    count: int
    sequences: np.ndarray
    seed: int

    def __post_init__(self):
        self.sequences = np.asarray(self.sequences)
        if self.sequences.shape != (self.count, self.length):
            raise ValueError(
                f"sequences must have shape {(self.count, self.length)}, "
                f"got {self.sequences.shape}"
            )


def sample_sequences(model: Hmm, count: int, length: int, seed: int) -> SampleBatch:
    """Draw T independent output sequences of the HMM.

    Each sequence starts from the stationary distribution and alternates
    emission and transition draws. A single counter-based Philox stream keyed
    by the seed supplies one uniform row per sequence, so batches are
    reproducible and independent of generation order.
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.Generator(np.random.Philox(key=seed))

    cum_pi = np.cumsum(model.pi)
    cum_O = np.cumsum(model.O, axis=0).T  # row i: emission CDF of state i
    cum_Q = np.cumsum(model.Q, axis=0).T  # row i: transition CDF of state i

    sequences = np.empty((count, length), dtype=np.int16)
    # row-chunked draws consume the Philox stream exactly like one big call,
    # keeping memory bounded at large T without changing the output
    chunk = max(1, min(count, 1 << 18))
    for start in range(0, count, chunk):
        stop = min(count, start + chunk)
        uniforms = rng.random((stop - start, 2 * length + 1))
        state = np.minimum(
            (cum_pi[None, :] <= uniforms[:, 0, None]).sum(axis=1), model.k - 1
        )
        for t in range(length):
            u_emit = uniforms[:, 1 + 2 * t, None]
            sequences[start:stop, t] = np.minimum(
                (cum_O[state] <= u_emit).sum(axis=1), model.d - 1
            ) + 1
            u_step = uniforms[:, 2 + 2 * t, None]
            state = np.minimum((cum_Q[state] <= u_step).sum(axis=1), model.k - 1)
    return SampleBatch(d=model.d, length=length, count=count, sequences=sequences, seed=seed)


def empirical_joint(batch: SampleBatch, N: int) -> JointTable:
    """Frequency table of the first N letters across the batch's sequences.

    One window per sequence keeps the entries independent across sequences;
    the counting measure makes the table an exact probability distribution
    and marginalization-consistent by construction.
    """
    if batch.length < N:
        raise ValueError(f"sequences of length {batch.length} cannot give N={N} windows")
    size = check_capacity(batch.d, N)
    powers = batch.d ** np.arange(N - 1, -1, -1, dtype=np.int64)
    indices = (batch.sequences[:, :N].astype(np.int64) - 1) @ powers
    counts = np.bincount(indices, minlength=size)
    return JointTable(
        batch.d,
        N,
        counts / batch.count,
        provenance="empirical",
        sample_count=batch.count,
    )


def windowed_joint(sequence: np.ndarray, d: int, N: int) -> JointTable:
    """Sliding-window estimate from a single long sequence.

    Overlapping windows correlate the entries, so this estimator is outside
    the independence assumptions of the sample-complexity analysis; it is
    provided for realistic single-trajectory data.
    """
    sequence = np.asarray(sequence)
    if sequence.ndim != 1 or sequence.size < N:
        raise ValueError("need a 1-d sequence of length >= N")
    size = check_capacity(d, N)
    powers = d ** np.arange(N - 1, -1, -1, dtype=np.int64)
    windows = np.lib.stride_tricks.sliding_window_view(sequence, N)
    indices = (windows.astype(np.int64) - 1) @ powers
    counts = np.bincount(indices, minlength=size)
    return JointTable(d, N, counts / len(indices), provenance="empirical",
                      sample_count=len(indices))


def theorem3_sample_size(
    k: int,
    d: int,
    sigma_k: float,
    epsilon: float = 0.1,
    failure_prob: float = 0.05,
) -> float:
    """Sample-size surrogate T(eps) = k^6 d^4 / (eps^4 sigma_k^8) log(2 k^4 d^2 / eta).

    The absolute constant is set to 1; this is a diagnostic scale, not a
    certified bound.
    """
    if sigma_k <= 0:
        return math.inf
    return (
        k**6 * d**4 / (epsilon**4 * sigma_k**8) * math.log(2 * k**4 * d**2 / failure_prob)
    )


def estimate_and_realize(
    batch: SampleBatch,
    n: int,
    rank_tol: float = 1e-8,
    expected_k: int | None = None,
) -> tuple[QuasiHmm, RealizationDiagnostics]:
    """Empirical table -> Hankel pair -> realization, with diagnostics.

    Diagnostics carry sigma_k of the empirical Hankel matrix and the implied
    sample-size surrogate of the stability theorem.
    """
    if batch.length < 2 * n + 1:
        raise ValueError(f"need sequences of length >= {2 * n + 1} for n={n}")
    table = empirical_joint(batch, 2 * n + 1)
    hankel = build_hankel(table, n)
    model, diagnostics = realize_quasi(hankel, rank_tol=rank_tol, expected_k=expected_k)
    diagnostics.verify_error = verify_realization(model, table, max_len=table.N).error
    diagnostics.sample_size_surrogate = theorem3_sample_size(
        model.k, batch.d, diagnostics.sigma_k
    )
    return model, diagnostics


def aligned_parameter_error(
    estimate: QuasiHmm, exact: QuasiHmm
) -> dict[str, float]:
    """Basis-invariant parameter error after fitting the equivalence transform.

    Fits the least-squares Definition-2 transform S from the estimate onto
    the exact-input realization and reports
    ``err_u = ||S^T u^ - u~||``, ``err_v = ||S^-1 v^ - v~||`` and the largest
    spectral-norm operator error.
    """
    S, fit_residual = fit_intertwiner(estimate, exact)
    if np.linalg.cond(S) > 1e12:
        raise ValueError("fitted equivalence transform is numerically singular")
    u_aligned = S.T @ estimate.u
    v_aligned = np.linalg.solve(S, estimate.v)
    err_u = float(np.linalg.norm(u_aligned - exact.u))
    err_v = float(np.linalg.norm(v_aligned - exact.v))
    err_ops = 0.0
    for j in range(estimate.d):
        aligned = np.linalg.solve(S, estimate.ops[j] @ S)
        err_ops = max(err_ops, float(np.linalg.norm(aligned - exact.ops[j], ord=2)))
    return {
        "err_u": err_u,
        "err_v": err_v,
        "err_ops_max": err_ops,
        "fit_residual": fit_residual,
    }


# ---------------------------------------------------------------------------
# Perturbation inequalities (these are theorems; violations mean bugs)
# ---------------------------------------------------------------------------

def mirsky_check(Xhat: np.ndarray, X: np.ndarray) -> tuple[float, float]:
    """Mirsky's theorem terms: (sqrt(sum (sigma_i^ - sigma_i)^2), ||Xhat - X||_F).

    Pure evaluation; the caller asserts lhs <= rhs.
    """
    Xhat = np.asarray(Xhat, float)
    X = np.asarray(X, float)
    if Xhat.shape != X.shape:
        raise ValueError("shapes must match")
    s_hat = np.linalg.svd(Xhat, compute_uv=False)
    s = np.linalg.svd(X, compute_uv=False)
    lhs = float(np.sqrt(np.sum((s_hat - s) ** 2)))
    rhs = float(np.linalg.norm(Xhat - X, ord="fro"))
    return lhs, rhs


def _procrustes_deviation(base: np.ndarray, perturbed: np.ndarray) -> float:
    # deviation up to an orthogonal rotation within the subspace
    M = base.T @ perturbed
    u_, _, vt_ = np.linalg.svd(M)
    rotation = u_ @ vt_
    return float(np.linalg.norm(perturbed - base @ rotation, ord=2))


def wedin_check(X: np.ndarray, E: np.ndarray, k: int) -> tuple[float, float, float]:
    """Wedin-corollary terms: (U deviation, V deviation, sqrt(2)||E||_F / sigma_k).

    Deviations are measured between the leading-k singular subspaces of X and
    X + E after optimal orthogonal alignment. Requires the regime
    ``sigma_k(X) > 2 ||E||_2`` used by the stability proof.
    """
    X = np.asarray(X, float)
    E = np.asarray(E, float)
    sigma = np.linalg.svd(X, compute_uv=False)
    if k < 1 or k > sigma.size:
        raise ValueError(f"k={k} outside [1, {sigma.size}]")
    e_norm = np.linalg.norm(E, ord=2)
    if not sigma[k - 1] > 2 * e_norm:
        raise ValueError(
            f"precondition sigma_k > 2 ||E|| violated: "
            f"{sigma[k - 1]:.3e} <= {2 * e_norm:.3e}"
        )
    U, _, Vt = np.linalg.svd(X)
    Uh, _, Vht = np.linalg.svd(X + E)
    dev_u = _procrustes_deviation(U[:, :k], Uh[:, :k])
    dev_v = _procrustes_deviation(Vt[:k].T, Vht[:k].T)
    bound = float(np.sqrt(2) * np.linalg.norm(E, ord="fro") / sigma[k - 1])
    return dev_u, dev_v, bound


def product_perturbation_check(
    factors: list[np.ndarray],
    perturbed_factors: list[np.ndarray],
    ord=2,
) -> tuple[float, float]:
    """Product perturbation terms:
    (||prod A^ - prod A||, 2^(K-1) prod ||A_i|| sum ||A^_i - A_i|| / ||A_i||).

    Requires ``||A^_i - A_i|| <= ||A_i||`` for every factor.
    """
    if len(factors) != len(perturbed_factors) or not factors:
        raise ValueError("need matching nonempty factor lists")
    norms = [np.linalg.norm(A, ord=ord) for A in factors]
    deltas = [
        np.linalg.norm(np.asarray(Ah) - np.asarray(A), ord=ord)
        for A, Ah in zip(factors, perturbed_factors)
    ]
    for i, (nA, dA) in enumerate(zip(norms, deltas)):
        if dA > nA:
            raise ValueError(f"factor {i}: perturbation {dA:.3e} exceeds norm {nA:.3e}")
    prod = factors[0]
    prod_hat = perturbed_factors[0]
    for A, Ah in zip(factors[1:], perturbed_factors[1:]):
        prod = prod @ A
        prod_hat = prod_hat @ Ah
    lhs = float(np.linalg.norm(prod_hat - prod, ord=ord))
    rhs = float(
        2 ** (len(factors) - 1)
        * np.prod(norms)
        * sum(d / n for d, n in zip(deltas, norms))
    )
    return lhs, rhs
