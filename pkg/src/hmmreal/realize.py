"""Minimal quasi-HMM realization from Hankel matrices (the SVD algorithm).

Given ``H0 = U_H D_H V_H^T`` truncated to the numeric rank, the realization
is ``U = U_H D_H^(1/2)``, ``V = V_H D_H^(1/2)``, ``u = U^T e``, ``v = V^T e``,
``A^(j) = U^+ H^(j) (V^+)^T`` with the pseudo-inverses formed from the already
available SVD factors (never re-factorized).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import RankDeficiencyError
from .models import QuasiHmm
from .stats import (
    DEFAULT_RANK_TOL,
    HankelPair,
    JointTable,
    all_strings,
    build_hankel,
    capacity_limit,
    exact_joint,
    predict_batch,
    prediction_table,
)


@dataclass
class RealizationDiagnostics:
    """Numerical context of a realization run.

    ``detected_rank`` is the numeric rank of H0 (even when an expected order
    overrode it); ``sigma_k`` the smallest retained singular value;
    ``verify_error`` the max-abs probability mismatch at the verification
    length (filled by the table-level wrappers); ``normalization_residuals``
    the deviations from the two operator-sum constraints.
    """

    detected_rank: int
    singular_values: np.ndarray = field(repr=False)
    sigma_k: float
    verify_error: float | None = None
    normalization_residuals: tuple[float, float] = (np.nan, np.nan)
    rank_warning: str | None = None
    sample_size_surrogate: float | None = None


def realize_quasi(
    hankel: HankelPair,
    rank_tol: float = DEFAULT_RANK_TOL,
    expected_k: int | None = None,
) -> tuple[QuasiHmm, RealizationDiagnostics]:
    """Run the Hankel-SVD realization algorithm.

    Parameters
    ----------
    hankel : HankelPair
        H0 and its d slices.
    rank_tol : float
        Relative singular-value threshold for the rank decision.
    expected_k : int, optional
        Known model order. Overrides the detected rank (with a warning when
        they differ); raises :class:`RankDeficiencyError` when it exceeds the
        numeric rank, which signals that the window is too small.

    Returns
    -------
    (QuasiHmm, RealizationDiagnostics)
    """
    if hankel.slices is None:
        raise ValueError("realization needs the Hankel slices H(j)")
    H0 = np.asarray(hankel.H0, float)
    UH, svals, VHt = np.linalg.svd(H0)
    if svals.size == 0 or svals[0] <= 0:
        raise RankDeficiencyError("H0 is zero: empty process")
    numeric = int(np.sum(svals > rank_tol * svals[0]))
    if numeric == 0:
        raise RankDeficiencyError("H0 has numeric rank 0: empty process")

    k = numeric
    rank_warning = None
    if expected_k is not None:
        if expected_k > numeric:
            raise RankDeficiencyError(
                f"expected order {expected_k} exceeds the numeric rank {numeric} "
                f"of H0; the window size is too small for this order"
            )
        if expected_k != numeric:
            rank_warning = (
                f"numeric rank {numeric} of H0 differs from expected order "
                f"{expected_k}; truncating to {expected_k}"
            )
            warnings.warn(rank_warning)
        k = expected_k

    root = np.sqrt(svals[:k])
    Uk = UH[:, :k]
    Vk = VHt[:k].T
    u = (Uk * root).T @ np.ones(H0.shape[0])
    v = (Vk * root).T @ np.ones(H0.shape[1])
    inv_root = 1.0 / root
    # U^+ H V^+T = D^(-1/2) U_H^T  H  V_H D^(-1/2)
    ops = np.stack(
        [inv_root[:, None] * (Uk.T @ Hj @ Vk) * inv_root[None, :] for Hj in hankel.slices]
    )
    model = QuasiHmm(d=hankel.d, k=k, u=u, v=v, ops=ops)
    diagnostics = RealizationDiagnostics(
        detected_rank=numeric,
        singular_values=svals,
        sigma_k=float(svals[k - 1]),
        normalization_residuals=model.normalization_residuals(),
        rank_warning=rank_warning,
    )
    return model, diagnostics


def predict(model: QuasiHmm, string) -> float:
    """String probability of a (possibly realized) operator model.

    Realizations from noisy inputs can output slightly negative values; the
    raw value is returned unclamped (quasi-HMM operators carry no sign
    constraint), so callers can see the noise. Verification results count
    the negative outputs.
    """
    return exact_joint(model, string)


@dataclass
class VerifyResult:
    """Max-abs prediction mismatch against a reference, plus how it was measured."""

    error: float
    exhaustive: bool
    strings_checked: int
    negative_predictions: int

    def __float__(self) -> float:
        return self.error


def verify_realization(
    model: QuasiHmm,
    reference: QuasiHmm | JointTable,
    max_len: int,
    seed: int = 0,
    sample_size: int = 100_000,
) -> VerifyResult:
    """Maximum probability mismatch over all strings of length <= max_len.

    Lengths whose d^m exceeds the capacity limit are checked on a seeded
    uniform sample of ``sample_size`` strings instead (reported through
    ``exhaustive=False``).
    """
    if model.d != getattr(reference, "d", model.d):
        raise ValueError("alphabet size mismatch")
    is_table = isinstance(reference, JointTable)
    if is_table and max_len > reference.N:
        raise ValueError(
            f"reference table holds length-{reference.N} probabilities; "
            f"cannot verify at length {max_len}"
        )
    marginals: dict[int, np.ndarray] = {}
    if is_table:
        current = reference
        marginals[current.N] = current.values
        while current.N > 1:
            current = current.marginalize_last()
            marginals[current.N] = current.values

    rng = np.random.default_rng(seed)
    error = 0.0
    exhaustive = True
    checked = 0
    negative = 0
    for m in range(1, max_len + 1):
        if model.d**m <= capacity_limit() and model.d**m <= sample_size * 8:
            mine = prediction_table(model, m)
            theirs = marginals[m] if is_table else prediction_table(reference, m)
            checked += mine.size
        else:
            exhaustive = False
            strings = rng.integers(1, model.d + 1, size=(sample_size, m))
            mine = predict_batch(model, strings)
            theirs = (
                np.array([reference.probability(s) for s in strings])
                if is_table
                else predict_batch(reference, strings)
            )
            checked += sample_size
        error = max(error, float(np.max(np.abs(mine - theirs))))
        negative += int(np.sum(mine < 0))
    return VerifyResult(
        error=error,
        exhaustive=exhaustive,
        strings_checked=checked,
        negative_predictions=negative,
    )


def realize_quasi_from_table(
    table: JointTable,
    n: int,
    rank_tol: float = DEFAULT_RANK_TOL,
    expected_k: int | None = None,
    verify_len: int | None = None,
) -> tuple[QuasiHmm, RealizationDiagnostics]:
    """Build the Hankel pair from a length-(2n+1) table, realize, and verify
    against the table (at ``verify_len``, default the full window)."""
    hankel = build_hankel(table, n)
    model, diagnostics = realize_quasi(hankel, rank_tol=rank_tol, expected_k=expected_k)
    length = table.N if verify_len is None else verify_len
    diagnostics.verify_error = verify_realization(model, table, max_len=length).error
    return model, diagnostics
