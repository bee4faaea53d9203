"""Recovery of (Q, O) from CP factors and the end-to-end minimal-HMM pipeline.

The observation matrix comes from normalizing C's columns; the transition
matrix from ``Q = (O kr A^(n-1))^+ A`` when the future factor has full column
rank (n >= 2), or ``Q = O^+ A^(1)`` when the observation matrix does
(n = 1, d >= k). Stochasticity repairs (clamping pseudo-inverse noise) are
always recorded, never hidden.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConditionError,
    DegeneracyError,
    RankDeficiencyError,
    RealizationError,
    RealizationFailure,
)
from .models import Hmm, hmm_to_quasi
from .stats import (
    DEFAULT_RANK_TOL,
    JointTable,
    build_tensor,
    conditional_factors,
    khatri_rao,
    numeric_rank,
    prediction_table,
    tensor_from_factors,
)
from .tensordecomp import CpFactors, foobi_decompose, simdiag_decompose
from .models import low_rank_hmm


def normalize_columns(C: np.ndarray, neg_tol: float = 1e-10) -> tuple[np.ndarray, float]:
    """Scale columns to sum 1; clamp negative noise to zero and renormalize.

    Returns (O, repair) where repair is the max-abs difference between the
    clamped result and the raw column-normalized matrix (0 on clean input).
    Negative entries below ``-neg_tol`` additionally trigger a warning.
    """
    C = np.asarray(C, float)
    sums = C.sum(axis=0)
    if np.min(np.abs(sums)) < 1e-300:
        raise ValueError("cannot normalize a column with zero sum")
    raw = C / sums
    if raw.min() >= 0:
        return raw, 0.0
    if raw.min() < -neg_tol:
        warnings.warn(
            f"clamping negative entries (min {raw.min():.3e}) before renormalizing"
        )
    clipped = np.clip(raw, 0.0, None)
    repaired = clipped / clipped.sum(axis=0)
    return repaired, float(np.max(np.abs(repaired - raw)))


def marginalize_prefix(A: np.ndarray, d: int, n: int, m: int) -> np.ndarray:
    """Marginalize column-stochastic P(next n symbols | state) to the first m.

    Sums out symbols m+1..n, i.e. the least-significant index digits.
    """
    A = np.asarray(A, float)
    if not 0 <= m <= n:
        raise ValueError(f"need 0 <= m <= n, got m={m}, n={n}")
    k = A.shape[1]
    if A.shape[0] != d**n:
        raise ValueError(f"expected {d**n} rows for d={d}, n={n}")
    return A.reshape(d**m, d ** (n - m), k).sum(axis=1)


def recover_Q_fullrank_A(
    A: np.ndarray, O: np.ndarray, d: int, n: int, rel_tol: float = DEFAULT_RANK_TOL
) -> tuple[np.ndarray, float]:
    """Transition recovery ``Q = (O kr A^(n-1))^+ A`` for full-column-rank A.

    ``A`` must be the column-stochastic d^n x k future factor with n >= 2;
    ``A^(n-1)`` is obtained by prefix marginalization. Returns (Q, repair).
    """
    if n < 2:
        raise ValueError("the Khatri-Rao recovery needs n >= 2; use the O route at n=1")
    k = A.shape[1]
    if numeric_rank(A, rel_tol).rank < k:
        raise RankDeficiencyError(
            "future factor A is column rank deficient; Eq.-(21)-style recovery "
            "does not apply"
        )
    A_prev = marginalize_prefix(A, d, n, n - 1)
    design = khatri_rao(O, A_prev)
    if numeric_rank(design, rel_tol).rank < k:
        raise RankDeficiencyError("O kr A^(n-1) is column rank deficient")
    Q_raw, *_ = np.linalg.lstsq(design, A, rcond=None)
    return normalize_columns(Q_raw)


def recover_Q_fullrank_O(
    A1: np.ndarray, O: np.ndarray, rel_tol: float = DEFAULT_RANK_TOL
) -> tuple[np.ndarray, float]:
    """Transition recovery ``Q = O^+ A^(1)`` for full-column-rank O (d >= k)."""
    k = O.shape[1]
    if numeric_rank(O, rel_tol).rank < k:
        raise RankDeficiencyError("observation matrix is column rank deficient")
    Q_raw, *_ = np.linalg.lstsq(O, A1, rcond=None)
    return normalize_columns(Q_raw)


@dataclass
class RecoveryResult:
    """Recovered HMM plus the provenance of every repair made along the way."""

    model: Hmm
    strategy: str
    backend: str
    alignment: tuple[int, ...]
    residuals: dict[str, float] = field(default_factory=dict)
    factors: CpFactors | None = field(default=None, repr=False)


def realize_hmm(
    table: JointTable,
    n: int,
    backend: str = "auto",
    rank_tol: float = DEFAULT_RANK_TOL,
    residual_tol: float = 1e-6,
    seed: int = 0,
    reference: Hmm | None = None,
    equiv_tol: float = 1e-6,
) -> RecoveryResult:
    """Full pipeline: moment tensor, CP decomposition, (Q, O) recovery.

    ``backend="auto"`` tries simultaneous diagonalization first and falls
    back to FOOBI on condition errors. The recovered model is verified by
    regenerating the length-N joint table; when a ``reference`` model is
    supplied, the permutation alignment and its residual are recorded too.
    """
    if backend not in ("auto", "simdiag", "foobi"):
        raise ValueError(f"unknown backend {backend!r}")
    tensor = build_tensor(table, n)
    failures: dict[str, str] = {}
    factors = None
    if backend in ("auto", "simdiag"):
        try:
            factors = simdiag_decompose(
                tensor, rank_tol=rank_tol, seed=seed, residual_tol=residual_tol
            )
        except RealizationError as exc:
            failures["simdiag"] = str(exc)
            if backend == "simdiag":
                raise RealizationFailure(
                    f"simdiag backend failed: {exc}", diagnostics=failures
                ) from exc
    if factors is None:
        try:
            factors = foobi_decompose(tensor, tol=rank_tol)
        except RealizationError as exc:
            failures["foobi"] = str(exc)
            raise RealizationFailure(
                "all decomposition backends failed", diagnostics=failures
            ) from exc

    O, o_repair = normalize_columns(factors.C)
    if n == 1:
        if table.d < factors.k:
            raise RankDeficiencyError(
                f"n=1 recovery needs d >= k, got d={table.d} < k={factors.k}; "
                f"increase the window"
            )
        Q, q_repair = recover_Q_fullrank_O(factors.A, O, rel_tol=rank_tol)
        strategy = "full-rank-O"
    else:
        Q, q_repair = recover_Q_fullrank_A(factors.A, O, table.d, n, rel_tol=rank_tol)
        strategy = "full-rank-A"

    model = Hmm(d=table.d, k=factors.k, Q=Q, O=O)
    regenerated = prediction_table(hmm_to_quasi(model), table.N)
    verify_error = float(np.max(np.abs(regenerated - table.values)))
    residuals = {
        "cp_residual": factors.residual,
        "o_repair": o_repair,
        "q_repair": q_repair,
        "verify_error": verify_error,
    }
    alignment = tuple(range(factors.k))
    if reference is not None and reference.k == factors.k:
        from .models import hmm_equivalent_up_to_permutation

        equivalence = hmm_equivalent_up_to_permutation(reference, model, tol=equiv_tol)
        alignment = equivalence.permutation
        residuals["reference_residual"] = equivalence.residual
    return RecoveryResult(
        model=model,
        strategy=strategy,
        backend=factors.backend,
        alignment=alignment,
        residuals=residuals,
        factors=factors,
    )


@dataclass
class DegenerateCheckVerdict:
    """Outcome of the randomized degenerate-class certificate."""

    yes: bool
    d: int
    k: int
    r: int
    seed: int
    reason: str
    residual: float | None = None
    permutation: tuple[int, ...] | None = None


def check_condition_degenerate(
    d: int,
    k: int,
    r: int,
    seed: int,
    tol: float = DEFAULT_RANK_TOL,
    equiv_tol: float = 1e-6,
) -> DegenerateCheckVerdict:
    """Randomized certificate for the rank-deficient-transition class.

    Samples a random rank-r-transition HMM, builds the exact n=1 factor
    matrices A = O Q, B = O Q~, C = O Diag(pi), forms their tensor, and runs
    FOOBI. "yes" iff the factors are recovered uniquely up to one common
    column permutation within ``equiv_tol``; a generic success certifies the
    whole class outside a measure-zero set.
    """
    if not d >= k > r >= 1:
        raise ValueError("need d >= k > r >= 1")
    model = low_rank_hmm(d, k, r, seed)
    A, B, C = conditional_factors(model, 1)
    tensor = tensor_from_factors(A, B, C)
    try:
        factors = foobi_decompose(tensor, tol=tol, expected_k=k)
    except RealizationError as exc:
        return DegenerateCheckVerdict(
            yes=False, d=d, k=k, r=r, seed=seed, reason=f"{type(exc).__name__}: {exc}"
        )
    truth = np.vstack([A, B, C])
    found = np.vstack([factors.A, factors.B, factors.C])
    sigma = _best_common_permutation(truth, found)
    residual = float(np.max(np.abs(truth - found[:, list(sigma)])))
    yes = residual <= equiv_tol
    reason = (
        "factors recovered up to a common column permutation"
        if yes
        else f"factor mismatch {residual:.3e} exceeds {equiv_tol:g}"
    )
    return DegenerateCheckVerdict(
        yes=yes,
        d=d,
        k=k,
        r=r,
        seed=seed,
        reason=reason,
        residual=residual,
        permutation=sigma,
    )


def _best_common_permutation(reference: np.ndarray, candidate: np.ndarray) -> tuple[int, ...]:
    from .models import _greedy_column_match

    return _greedy_column_match(reference, candidate)
