"""String statistics: index maps, joint-probability tables, Hankel matrices,
the third-order moment tensor, conditional factor matrices, Khatri-Rao
products, and rank utilities.

Conventions used throughout the package:

* letters are 1-based, in ``[d] = {1, ..., d}``;
* a length-n string ``(l_1, ..., l_n)`` maps to the 1-based linear index
  ``L = (l_1 - 1) d^(n-1) + ... + (l_n - 1) + 1`` (first letter most
  significant);
* string probabilities of an operator model are evaluated with the latest
  symbol leftmost, ``P(l_1 ... l_N) = u^T A^(l_N) ... A^(l_1) v``;
* the Hankel matrix ``H0`` is indexed (future string, past string) where the
  future block starts at time 0 and the past string is read backwards in
  time, ``(y_-1, y_-2, ..., y_-n)``;
* the moment tensor is indexed (future, past, current) with the future block
  starting at time 1.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from itertools import combinations
from typing import NamedTuple, TYPE_CHECKING

import numpy as np

from .errors import CapacityError

if TYPE_CHECKING:
    from .models import Hmm, QuasiHmm

DEFAULT_CAPACITY = 1 << 26

#: relative singular-value threshold used by default for rank decisions
DEFAULT_RANK_TOL = 1e-8


def capacity_limit() -> int:
    """Maximum number of dense table entries (env ``HMMREAL_CAPACITY``)."""
    return int(os.environ.get("HMMREAL_CAPACITY", DEFAULT_CAPACITY))


def check_capacity(d: int, n: int) -> int:
    """Return d**n, raising :class:`CapacityError` if it exceeds the budget."""
    size = d**n
    limit = capacity_limit()
    if size > limit:
        raise CapacityError(
            f"table of d**N = {d}**{n} = {size} entries exceeds the capacity "
            f"limit {limit} (override with HMMREAL_CAPACITY)",
            required=size,
        )
    return size


# ---------------------------------------------------------------------------
# Index map L between [d]^n and [d^n]
# ---------------------------------------------------------------------------

def index_of(string, d: int) -> int:
    """Map a string in [d]^n to its 1-based linear index.

    The first letter is the most significant digit:
    ``(l_1, ..., l_n) -> (l_1 - 1) d^(n-1) + ... + l_n``.
    """
    idx = 0
    for letter in string:
        if not 1 <= letter <= d:
            raise ValueError(f"letter {letter} outside alphabet [1, {d}]")
        idx = idx * d + (int(letter) - 1)
    return idx + 1


def string_of(index: int, d: int, n: int) -> tuple[int, ...]:
    """Inverse of :func:`index_of` over [d^n]."""
    if not 1 <= index <= d**n:
        raise ValueError(f"index {index} outside [1, {d**n}]")
    rem = index - 1
    letters = []
    for _ in range(n):
        rem, digit = divmod(rem, d)
        letters.append(digit + 1)
    return tuple(reversed(letters))


@dataclass(frozen=True)
class StringIndex:
    """Bijection between strings in [d]^n and 1-based indices in [d^n]."""

    d: int
    n: int

    @property
    def size(self) -> int:
        return self.d**self.n

    def index(self, string) -> int:
        if len(string) != self.n:
            raise ValueError(f"expected a length-{self.n} string")
        return index_of(string, self.d)

    def string(self, index: int) -> tuple[int, ...]:
        return string_of(index, self.d, self.n)


def all_strings(d: int, n: int) -> np.ndarray:
    """All strings of [d]^n as a (d**n, n) array of 1-based letters, in index order."""
    if n == 0:
        return np.zeros((1, 0), dtype=np.int64)
    grids = np.indices((d,) * n).reshape(n, -1).T
    return grids + 1


# ---------------------------------------------------------------------------
# Operator-model probabilities and joint tables
# ---------------------------------------------------------------------------

def exact_joint(model: "QuasiHmm", string) -> float:
    """Probability of a string under an operator model (Eq.-(1) product).

    The operators apply in string order from the right: the state vector
    starts at ``v`` and the first letter's operator acts first.
    """
    w = np.asarray(model.v, dtype=float)
    for letter in string:
        if not 1 <= letter <= model.d:
            raise ValueError(f"letter {letter} outside alphabet [1, {model.d}]")
        w = model.ops[int(letter) - 1] @ w
    return float(model.u @ w)


def prediction_table(model: "QuasiHmm", length: int) -> np.ndarray:
    """All length-``length`` string values of an operator model, in index order.

    Dynamic programming over prefixes; no validation is applied, so realized
    models with slightly negative outputs pass through unchanged.
    """
    check_capacity(model.d, length)
    W = np.asarray(model.v, dtype=float)[None, :]
    for _ in range(length):
        # append one letter: new prefix index = old * d + (letter-1)
        W = np.einsum("jab,pb->pja", model.ops, W).reshape(-1, model.k)
    return W @ np.asarray(model.u, dtype=float)


def predict_batch(model: "QuasiHmm", strings: np.ndarray) -> np.ndarray:
    """Probabilities for a batch of equal-length strings (1-based letters)."""
    strings = np.asarray(strings)
    W = np.broadcast_to(np.asarray(model.v, float), (strings.shape[0], model.k)).copy()
    for t in range(strings.shape[1]):
        for j in range(model.d):
            mask = strings[:, t] == j + 1
            if mask.any():
                W[mask] = W[mask] @ model.ops[j].T
    return W @ np.asarray(model.u, float)


@dataclass
class JointTable:
    """Joint probabilities of all length-N strings, ordered by the index map.

    ``provenance`` is ``"exact"`` for tables computed from a model and
    ``"empirical"`` for frequency estimates (``sample_count`` then holds the
    number of sequences or windows).
    """

    d: int
    N: int
    values: np.ndarray
    provenance: str = "exact"
    sample_count: int | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.d**self.N,):
            raise ValueError(
                f"expected {self.d**self.N} values for d={self.d}, N={self.N}, "
                f"got shape {self.values.shape}"
            )
        if self.provenance not in ("exact", "empirical"):
            raise ValueError(f"unknown provenance {self.provenance!r}")

    @property
    def sum_tolerance(self) -> float:
        return 1e-10 if self.provenance == "exact" else 1e-6

    def probability(self, string) -> float:
        if len(string) != self.N:
            raise ValueError(f"expected a length-{self.N} string")
        return float(self.values[index_of(string, self.d) - 1])

    def marginalize_last(self) -> "JointTable":
        """Sum out the final symbol, giving the length-(N-1) table."""
        if self.N < 1:
            raise ValueError("cannot marginalize a length-0 table")
        values = self.values.reshape(-1, self.d).sum(axis=1)
        return JointTable(self.d, self.N - 1, values, self.provenance, self.sample_count)

    def validate(self, tol: float | None = None) -> list[str]:
        """Return the list of violated invariants (empty when valid)."""
        tol = self.sum_tolerance if tol is None else tol
        violations = []
        lo, hi = self.values.min(), self.values.max()
        if lo < -tol or hi > 1 + tol:
            violations.append(f"entries outside [0, 1]: min={lo:.3e}, max={hi:.3e}")
        total = self.values.sum()
        if abs(total - 1.0) > tol:
            violations.append(f"entries sum to {total!r}, not 1 within {tol:g}")
        return violations


def joint_table(model: "QuasiHmm", N: int) -> JointTable:
    """Exact joint probabilities of all length-N strings of an operator model."""
    if N < 1:
        raise ValueError("window size N must be >= 1")
    values = prediction_table(model, N)
    return JointTable(model.d, N, values, provenance="exact")


# ---------------------------------------------------------------------------
# Hankel matrices and the moment tensor
# ---------------------------------------------------------------------------

@dataclass
class HankelPair:
    """The Hankel matrix H0 and its d single-symbol slices H(j).

    ``H0[L(future) - 1, L(past) - 1]`` is the probability of seeing the past
    string on times -n..-1 and the future string on times 0..n-1; slice j
    fixes an extra symbol j at time 0 with the future block shifted to times
    1..n.
    """

    d: int
    n: int
    H0: np.ndarray
    slices: np.ndarray | None = None

    def validate(self, tol: float = 1e-10) -> list[str]:
        violations = []
        size = self.d**self.n
        if self.H0.shape != (size, size):
            violations.append(f"H0 has shape {self.H0.shape}, expected {(size, size)}")
            return violations
        if self.H0.min() < -tol or self.H0.max() > 1 + tol:
            violations.append("H0 entries outside [0, 1]")
        if abs(self.H0.sum() - 1.0) > max(tol, 1e-6):
            violations.append(f"H0 entries sum to {self.H0.sum()!r}, not 1")
        if self.slices is not None:
            if self.slices.shape != (self.d, size, size):
                violations.append("slice stack has wrong shape")
            elif self.slices.min() < -tol or self.slices.max() > 1 + tol:
                violations.append("slice entries outside [0, 1]")
        return violations


def _window_axes(n: int) -> tuple[int, ...]:
    # future axes in time order, then past axes from time -1 back to -n
    return tuple(range(n, 2 * n)) + tuple(range(n - 1, -1, -1))


def build_hankel(table: JointTable, n: int) -> HankelPair:
    """Form H0 and the H(j) slices from a length-(2n+1) table.

    H0 comes from the length-2n marginal (future block starting at time 0),
    not from summing the slices, whose future block starts at time 1.
    """
    if table.N != 2 * n + 1:
        raise ValueError(f"table window N={table.N} does not match 2n+1={2 * n + 1}")
    d = table.d
    size = d**n
    R = table.values.reshape((d,) * table.N)
    axes = _window_axes(n)
    H0 = R.sum(axis=2 * n).transpose(axes).reshape(size, size)
    slices = np.empty((d, size, size))
    for j in range(d):
        slices[j] = np.take(R, j, axis=n).transpose(axes).reshape(size, size)
    return HankelPair(d=d, n=n, H0=H0, slices=slices)


@dataclass
class MomentTensor:
    """Third-order tensor of (future, past, current) window probabilities.

    When built from a known model, ``factors`` holds the conditional factor
    matrices (A, B, C) with ``M = sum_i A[:,i] (x) B[:,i] (x) C[:,i]``.
    """

    d: int
    n: int
    M: np.ndarray
    factors: tuple[np.ndarray, np.ndarray, np.ndarray] | None = field(
        default=None, repr=False
    )

    def matricize3(self) -> np.ndarray:
        return matricize3(self.M)

    def apply(self, V1: np.ndarray, V2: np.ndarray, V3: np.ndarray) -> np.ndarray:
        """Multilinear map M(V1, V2, V3) contracting each mode."""
        return np.einsum("abc,ia,jb,kc->ijk", self.M, V1, V2, V3)

    def validate(self, tol: float = 1e-10) -> list[str]:
        violations = []
        if self.M.min() < -tol or self.M.max() > 1 + tol:
            violations.append("entries outside [0, 1]")
        if abs(self.M.sum() - 1.0) > max(tol, 1e-6):
            violations.append(f"entries sum to {self.M.sum()!r}, not 1")
        return violations


def build_tensor(table: JointTable, n: int) -> MomentTensor:
    """Form the (d^n, d^n, d) moment tensor from a length-(2n+1) table."""
    if table.N != 2 * n + 1:
        raise ValueError(f"table window N={table.N} does not match 2n+1={2 * n + 1}")
    d = table.d
    size = d**n
    R = table.values.reshape((d,) * table.N)
    # full 2n+1 axes: future y_1..y_n, past y_-1..y_-n, then the time-0 symbol
    axes = tuple(range(n + 1, 2 * n + 1)) + tuple(range(n - 1, -1, -1)) + (n,)
    M = R.transpose(axes).reshape(size, size, d)
    return MomentTensor(d=d, n=n, M=M)


def tensor_from_factors(A: np.ndarray, B: np.ndarray, C: np.ndarray) -> MomentTensor:
    """Assemble the rank-k tensor sum_i A[:,i] (x) B[:,i] (x) C[:,i]."""
    A, B, C = (np.asarray(X, float) for X in (A, B, C))
    d = C.shape[0]
    n = round(math.log(A.shape[0], d)) if d > 1 else 1
    if d**n != A.shape[0] or A.shape[0] != B.shape[0]:
        raise ValueError("factor row counts are not a power d**n of the alphabet size")
    M = np.einsum("pi,qi,ri->pqr", A, B, C)
    return MomentTensor(d=d, n=n, M=M, factors=(A, B, C))


def moment_tensor_from_model(model: "Hmm", n: int, tol: float = 1e-10) -> MomentTensor:
    """Moment tensor of an HMM with its ground-truth factors attached.

    The tensor is built from the exact length-(2n+1) table; the conditional
    factors are attached and the reconstruction identity is checked to
    ``tol``.
    """
    ops = np.stack([model.Q * model.O[j][None, :] for j in range(model.d)])
    quasi = _OperatorView(model.d, model.k, np.ones(model.k), model.pi, ops)
    table = joint_table(quasi, 2 * n + 1)
    tensor = build_tensor(table, n)
    A, B, C = conditional_factors(model, n)
    err = np.max(np.abs(tensor.M - np.einsum("pi,qi,ri->pqr", A, B, C)))
    if err > tol:
        raise AssertionError(f"tensor/factor reconstruction mismatch {err:.3e} > {tol:g}")
    tensor.factors = (A, B, C)
    return tensor


@dataclass
class _OperatorView:
    # minimal duck-typed operator model; avoids importing models here
    d: int
    k: int
    u: np.ndarray
    v: np.ndarray
    ops: np.ndarray


# ---------------------------------------------------------------------------
# Conditional and observable factor matrices
# ---------------------------------------------------------------------------

class ConditionalFactors(NamedTuple):
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray


def _backward_matrix(Q: np.ndarray, pi: np.ndarray) -> np.ndarray:
    return (pi[:, None] * Q.T) / pi[None, :]


def conditional_factors(model: "Hmm", n: int) -> ConditionalFactors:
    """Factor matrices A, B (d^n x k) and C (d x k) of the moment tensor.

    ``A[:, m]`` is the distribution of the next n symbols given the current
    hidden state m, built by the recursion ``A^(t) = (O kr A^(t-1)) Q`` from
    ``A^(1) = O Q``; B is the mirror image through the backward transition,
    and ``C = O Diag(pi)``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    Q, O, pi = model.Q, model.O, model.pi
    Qt = _backward_matrix(Q, pi)
    A = O @ Q
    B = O @ Qt
    for _ in range(n - 1):
        A = khatri_rao(O, A) @ Q
        B = khatri_rao(O, B) @ Qt
    C = O * pi[None, :]
    return ConditionalFactors(A, B, C)


def observable_factors(model: "Hmm", n: int) -> tuple[np.ndarray, np.ndarray]:
    """The rank-factorization matrices E, F with ``H0 = E F^T``.

    ``E[L(f)-1, i]`` is the probability of the future string f on times
    0..n-1 given hidden state i at time 0; ``F[L(p)-1, i]`` is the joint
    probability of the past string p on times -1..-n and hidden state i at
    time 0.
    """
    Q, O, pi = model.Q, model.O, model.pi
    E = O.copy()
    for _ in range(n - 1):
        E = khatri_rao(O, E @ Q)
    B = conditional_factors(model, n).B
    F = B * pi[None, :]
    return E, F


def hankel_from_model(model: "Hmm", n: int, with_slices: bool = True) -> HankelPair:
    """Exact Hankel pair straight from the model via ``H0 = E F^T``.

    Avoids materializing the d^(2n+1) table; used by the rank sweeps where
    only spectra are needed. Agrees with :func:`build_hankel` on the exact
    table (tested).
    """
    E, F = observable_factors(model, n)
    H0 = E @ F.T
    slices = None
    if with_slices:
        slices = np.stack(
            [E @ (model.Q * model.O[j][None, :]) @ F.T for j in range(model.d)]
        )
    return HankelPair(d=model.d, n=n, H0=H0, slices=slices)


# ---------------------------------------------------------------------------
# Khatri-Rao product and matricization
# ---------------------------------------------------------------------------

def khatri_rao(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Column-wise Kronecker product; row (j1-1) q + j2 holds A[j1] * B[j2]."""
    A = np.asarray(A, float)
    B = np.asarray(B, float)
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"column counts differ: {A.shape[1]} vs {B.shape[1]}")
    return (A[:, None, :] * B[None, :, :]).reshape(A.shape[0] * B.shape[0], A.shape[1])


def matricize3(M) -> np.ndarray:
    """Mode-3 matricization, (p q) x r, row index (j1-1) q + j2.

    Satisfies ``matricize3(M) = (A kr B) C^T`` when ``M = A (x) B (x) C``.
    """
    tensor = M.M if isinstance(M, MomentTensor) else np.asarray(M, float)
    p, q, r = tensor.shape
    return tensor.reshape(p * q, r)


# ---------------------------------------------------------------------------
# Rank utilities
# ---------------------------------------------------------------------------

class RankResult(NamedTuple):
    rank: int
    singular_values: np.ndarray


def numeric_rank(X: np.ndarray, rel_tol: float = DEFAULT_RANK_TOL) -> RankResult:
    """Count of singular values above ``rel_tol`` times the largest."""
    X = np.asarray(X, float)
    if X.size == 0:
        return RankResult(0, np.zeros(0))
    s = np.linalg.svd(X, compute_uv=False)
    if s[0] <= 0:
        return RankResult(0, s)
    return RankResult(int(np.sum(s > rel_tol * s[0])), s)


KRUSKAL_GUARD = 20


def kruskal_rank(X: np.ndarray, tol: float = DEFAULT_RANK_TOL) -> int:
    """Largest r such that every r-column subset has full rank r.

    Brute-force subset enumeration; guarded to at most ``KRUSKAL_GUARD``
    columns since the cost is combinatorial. Intended for small fixtures.
    """
    X = np.asarray(X, float)
    m, c = X.shape
    if c > KRUSKAL_GUARD:
        raise CapacityError(
            f"kruskal_rank enumeration guarded to {KRUSKAL_GUARD} columns, got {c}",
            required=c,
        )
    cap = min(m, c, numeric_rank(X, tol).rank + 1)
    krank = 0
    for r in range(1, cap + 1):
        if all(
            numeric_rank(X[:, list(cols)], tol).rank == r
            for cols in combinations(range(c), r)
        ):
            krank = r
        else:
            break
    return krank
