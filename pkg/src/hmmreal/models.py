"""HMM and quasi-HMM (operator model) records, validation, generators, and
behavioral equivalence checks.

An HMM is parameterized by column-stochastic matrices: ``Q[j, i]`` is the
probability of moving to hidden state j from state i, ``O[j, i]`` the
probability of emitting letter j from state i. The stationary distribution
``pi`` is derived from Q and cached on the record.

A quasi-HMM ``(u, v, ops)`` produces string probabilities through operator
products, latest symbol leftmost: ``P(l_1 ... l_N) = u^T A^(l_N) ... A^(l_1) v``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegeneracyError, PositivityError
from . import stats


# ---------------------------------------------------------------------------
# Stationary distribution
# ---------------------------------------------------------------------------

#: absolute singular-value threshold for the nullspace dimension of (Q - I)
_NULLSPACE_TOL = 1e-9


def stationary_distribution(Q: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Unique stationary distribution of a column-stochastic matrix.

    Solves the augmented linear system ``[(Q - I); e^T] pi = [0; 1]`` by least
    squares rather than power iteration, so slowly mixing chains pose no
    problem. Degeneracy (a second unit eigenvalue) is detected through the
    nullspace dimension of ``Q - I``.

    Raises
    ------
    DegeneracyError
        If the stationary distribution is not unique, or no distribution
        satisfies ``Q pi = pi`` (non-stochastic input).
    PositivityError
        If some entry of pi is not strictly greater than ``tol``.
    """
    Q = np.asarray(Q, dtype=float)
    k = Q.shape[0]
    if Q.shape != (k, k):
        raise ValueError(f"transition matrix must be square, got {Q.shape}")
    shifted = Q - np.eye(k)
    svals = np.linalg.svd(shifted, compute_uv=False)
    null_dim = int(np.sum(svals < _NULLSPACE_TOL * max(1.0, svals[0])))
    if null_dim > 1:
        raise DegeneracyError(
            f"stationary distribution is not unique: nullspace of (Q - I) has "
            f"dimension {null_dim}"
        )
    system = np.vstack([shifted, np.ones((1, k))])
    rhs = np.zeros(k + 1)
    rhs[-1] = 1.0
    pi, *_ = np.linalg.lstsq(system, rhs, rcond=None)
    residual = np.max(np.abs(Q @ pi - pi))
    if residual > max(tol, 1e-8):
        raise DegeneracyError(
            f"no stationary distribution: residual ||Q pi - pi|| = {residual:.3e}"
        )
    if np.min(pi) <= tol:
        raise PositivityError(
            f"stationary distribution has a non-positive entry: min = {np.min(pi):.3e}"
        )
    return pi


# ---------------------------------------------------------------------------
# Model records
# ---------------------------------------------------------------------------

@dataclass
class Hmm:
    """Order-k hidden Markov model over alphabet [d].

    ``pi`` is derived from Q when not supplied; supplying it explicitly
    allows degenerate fixtures (e.g. ``Q = I``) where any distribution is
    stationary. Treat instances as immutable.
    """

    d: int
    k: int
    Q: np.ndarray
    O: np.ndarray
    pi: np.ndarray | None = None

    def __post_init__(self):
        self.Q = np.asarray(self.Q, dtype=float)
        self.O = np.asarray(self.O, dtype=float)
        if self.Q.shape != (self.k, self.k):
            raise ValueError(f"Q must be {self.k}x{self.k}, got {self.Q.shape}")
        if self.O.shape != (self.d, self.k):
            raise ValueError(f"O must be {self.d}x{self.k}, got {self.O.shape}")
        if self.pi is None:
            self.pi = stationary_distribution(self.Q)
        else:
            self.pi = np.asarray(self.pi, dtype=float)
            if self.pi.shape != (self.k,):
                raise ValueError(f"pi must have length {self.k}")


@dataclass
class QuasiHmm:
    """Operator model ``(u, v, ops)``; ``ops[j]`` is the k x k operator of
    letter j+1."""

    d: int
    k: int
    u: np.ndarray
    v: np.ndarray
    ops: np.ndarray

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        self.ops = np.asarray(self.ops, dtype=float)
        if self.u.shape != (self.k,) or self.v.shape != (self.k,):
            raise ValueError(f"u and v must have length {self.k}")
        if self.ops.shape != (self.d, self.k, self.k):
            raise ValueError(
                f"ops must have shape {(self.d, self.k, self.k)}, got {self.ops.shape}"
            )

    def normalization_residuals(self) -> tuple[float, float]:
        """Deviations from ``u^T (sum_j A^(j)) = u^T`` and ``(sum_j A^(j)) v = v``."""
        total = self.ops.sum(axis=0)
        ru = float(np.max(np.abs(self.u @ total - self.u)))
        rv = float(np.max(np.abs(total @ self.v - self.v)))
        return ru, rv

    def validate(self, tol: float = 1e-10) -> list[str]:
        ru, rv = self.normalization_residuals()
        violations = []
        if ru > tol:
            violations.append(f"u-side normalization residual {ru:.3e} > {tol:g}")
        if rv > tol:
            violations.append(f"v-side normalization residual {rv:.3e} > {tol:g}")
        return violations


def validate_hmm(model: Hmm, tol: float = 1e-10) -> list[str]:
    """Return the list of violated HMM invariants (empty when valid)."""
    violations = []
    col_tol = max(tol, 1e-12)
    for name, mat in (("Q", model.Q), ("O", model.O)):
        sums = mat.sum(axis=0)
        bad = np.where(np.abs(sums - 1.0) > col_tol)[0]
        if bad.size:
            violations.append(
                f"columns {bad.tolist()} of {name} do not sum to 1 "
                f"(worst {sums[bad[np.argmax(np.abs(sums[bad] - 1))]]!r})"
            )
        if mat.min() < -col_tol:
            violations.append(f"{name} has negative entries (min {mat.min():.3e})")
    pi = model.pi
    if abs(pi.sum() - 1.0) > col_tol:
        violations.append(f"pi sums to {pi.sum()!r}, not 1")
    if pi.min() <= 0:
        violations.append(f"pi has a non-positive entry (min {pi.min():.3e})")
    residual = np.max(np.abs(model.Q @ pi - pi))
    if residual > max(tol, 1e-10):
        violations.append(f"Q pi = pi violated: residual {residual:.3e}")
    return violations


def backward_transition(model: Hmm) -> np.ndarray:
    """Backward transition matrix ``Diag(pi) Q^T Diag(pi)^-1``.

    Entry (j, i) is the probability that the previous state was j given the
    current state is i; columns sum to 1.
    """
    if np.min(model.pi) <= 0:
        raise PositivityError("backward transition requires strictly positive pi")
    return (model.pi[:, None] * model.Q.T) / model.pi[None, :]


def hmm_to_quasi(model: Hmm) -> QuasiHmm:
    """The canonical operator model of an HMM: ``u = e``, ``v = pi``,
    ``A^(j) = Q Diag(O[j, :])``."""
    ops = np.stack([model.Q * model.O[j][None, :] for j in range(model.d)])
    return QuasiHmm(d=model.d, k=model.k, u=np.ones(model.k), v=model.pi.copy(), ops=ops)


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------

def _simplex_columns(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    # normalized i.i.d. exponentials are flat on the simplex
    raw = rng.exponential(size=(rows, cols))
    return raw / raw.sum(axis=0, keepdims=True)


def random_hmm(d: int, k: int, seed: int) -> Hmm:
    """HMM in general position: Q and O columns drawn flat on the simplex."""
    if d < 2 or k < 1:
        raise ValueError("need d >= 2 and k >= 1")
    rng = np.random.default_rng(seed)
    Q = _simplex_columns(rng, k, k)
    O = _simplex_columns(rng, d, k)
    return Hmm(d=d, k=k, Q=Q, O=O)


def shift_cycle_hmm(d: int, k: int, seed: int) -> Hmm:
    """Cyclic-shift transition fixture: ``Q[i-1, i] = 1``, ``Q[k, 1] = 1``.

    The stationary distribution is uniform and the backward transition equals
    ``Q^T``; the observation matrix is random stochastic.
    """
    if d < 2 or k < 1:
        raise ValueError("need d >= 2 and k >= 1")
    rng = np.random.default_rng(seed)
    Q = np.roll(np.eye(k), -1, axis=0)
    O = _simplex_columns(rng, d, k)
    return Hmm(d=d, k=k, Q=Q, O=O, pi=np.full(k, 1.0 / k))


def low_rank_hmm(d: int, k: int, r: int, seed: int, max_retries: int = 10) -> Hmm:
    """HMM whose transition matrix has exact rank r (requires d >= k >= r).

    Q is a column-normalized product of two nonnegative k x r factors; O is
    random stochastic with full column rank. r = k is the full-rank edge with
    the same genericity contract as :func:`random_hmm`.
    """
    if not d >= k >= r >= 1:
        raise ValueError("need d >= k >= r >= 1")
    rng = np.random.default_rng(seed)
    for _ in range(max_retries):
        left = rng.exponential(size=(k, r))
        right = rng.exponential(size=(k, r))
        raw = left @ right.T
        sums = raw.sum(axis=0)
        if sums.min() <= 0:
            continue
        Q = raw / sums
        if stats.numeric_rank(Q).rank != r:
            continue
        O = _simplex_columns(rng, d, k)
        if stats.numeric_rank(O).rank != k:
            continue
        return Hmm(d=d, k=k, Q=Q, O=O)
    raise DegeneracyError(f"could not draw a rank-{r} transition in {max_retries} tries")


def identity_transition_hmm(d: int, k: int, seed: int) -> Hmm:
    """Degenerate control fixture with ``Q = I`` (an i.i.d. mixture process).

    Every distribution is stationary for Q = I, so the uniform one is fixed
    explicitly; ``rank(H0) <= d^n`` regardless of k, which makes this the
    sweep's negative control.
    """
    if d < 2 or k < 1:
        raise ValueError("need d >= 2 and k >= 1")
    rng = np.random.default_rng(seed)
    O = _simplex_columns(rng, d, k)
    return Hmm(d=d, k=k, Q=np.eye(k), O=O, pi=np.full(k, 1.0 / k))


def noisy_parity_hmm(T: int, s: int, eta: float, rho: float) -> Hmm:
    """Hard-case HMM encoding a noisy parity computation over T stages.

    Stages 1..T-1 emit a uniform input bit; a parity register accumulates the
    previous stage's bit except at the single corrupted stage s, where the
    register keeps its value and the incoming bit is dropped. At stage T the
    register (updated with the last input) is revealed, flipped with
    probability ``eta``; a reset state with self-loop probability ``rho``
    restarts the cycle. Hidden states are (stage, emitted bit, register)
    triples plus two reveal states and the reset state; only reachable states
    are enumerated so the stationary distribution stays strictly positive.
    Alphabet d = 2, bits 0/1 mapped to letters 1/2.
    """
    if T < 3:
        raise ValueError("need T >= 3 so that a corrupted stage 2 <= s <= T-1 exists")
    if not 2 <= s <= T - 1:
        raise ValueError(f"corrupted stage s={s} outside [2, {T - 1}]")
    if not 0.0 <= eta <= 1.0:
        raise ValueError("eta must lie in [0, 1]")
    if not 0.0 < rho < 1.0:
        raise ValueError("rho must lie in (0, 1)")

    support: dict[int, tuple[int, ...]] = {1: (0,)}
    for t in range(2, T):
        support[t] = support[t - 1] if t == s else (0, 1)

    states: list[tuple] = []
    for t in range(1, T):
        for bit in (0, 1):
            for reg in support[t]:
                states.append(("stage", t, bit, reg))
    states.append(("reveal", 0))
    states.append(("reveal", 1))
    states.append(("reset",))
    index = {state: i for i, state in enumerate(states)}
    k = len(states)

    Q = np.zeros((k, k))
    O = np.zeros((2, k))
    for state in states:
        i = index[state]
        if state[0] == "stage":
            _, t, bit, reg = state
            O[bit, i] = 1.0
            if t < T - 1:
                nxt = reg if (t + 1) == s else reg ^ bit
                for bit2 in (0, 1):
                    Q[index[("stage", t + 1, bit2, nxt)], i] = 0.5
            else:
                Q[index[("reveal", bit ^ reg)], i] = 1.0
        elif state[0] == "reveal":
            revealed = state[1]
            O[revealed, i] = 1.0 - eta
            O[1 - revealed, i] = eta
            Q[index[("reset",)], i] = 1.0
        else:
            O[:, i] = 0.5
            Q[i, i] = rho
            for bit2 in (0, 1):
                Q[index[("stage", 1, bit2, 0)], i] = (1.0 - rho) / 2.0
    return Hmm(d=2, k=k, Q=Q, O=O)


# ---------------------------------------------------------------------------
# Equivalence
# ---------------------------------------------------------------------------

@dataclass
class EquivalenceResult:
    """Outcome of an equivalence check.

    ``kind`` is "linear-transform" (quasi models, Definition-2 sense) or
    "state-permutation" (HMMs up to hidden-state relabeling); ``residual`` is
    the max-abs mismatch after alignment.
    """

    kind: str
    residual: float
    tol: float
    transform: np.ndarray | None = field(default=None, repr=False)
    permutation: tuple[int, ...] | None = None

    @property
    def equivalent(self) -> bool:
        return self.residual <= self.tol


def fit_intertwiner(source: QuasiHmm, target: QuasiHmm) -> tuple[np.ndarray, float]:
    """Least-squares Definition-2 transform S mapping ``source`` onto ``target``.

    Solves ``min_S  sum_j ||A_src^(j) S - S A_tgt^(j)||_F^2
    + ||S^T u_src - u_tgt||^2 + ||S v_tgt - v_src||^2`` (all constraints are
    linear in S). Returns S and the relative fit residual.
    """
    if (source.d, source.k) != (target.d, target.k):
        raise ValueError("dimension mismatch")
    k = source.k
    eye = np.eye(k)
    blocks = []
    rhs = []
    for j in range(source.d):
        blocks.append(np.kron(source.ops[j], eye) - np.kron(eye, target.ops[j].T))
        rhs.append(np.zeros(k * k))
    blocks.append(np.kron(source.u[None, :], eye))
    rhs.append(target.u)
    blocks.append(np.kron(eye, target.v[None, :]))
    rhs.append(source.v)
    system = np.vstack(blocks)
    stacked = np.concatenate(rhs)
    vec, *_ = np.linalg.lstsq(system, stacked, rcond=None)
    S = vec.reshape(k, k)
    residual = float(
        np.linalg.norm(system @ vec - stacked) / max(1.0, np.linalg.norm(stacked))
    )
    return S, residual


def quasi_equivalent(
    a: QuasiHmm, b: QuasiHmm, probe_len: int = 3, tol: float = 1e-8
) -> EquivalenceResult:
    """Behavioral equivalence: compare all string probabilities up to probe_len.

    Parameters are basis-dependent (Definition-2 ambiguity), so the check is
    behavioral; the explicit transform is attached when the least-squares
    intertwiner fit succeeds, and left None otherwise.
    """
    if (a.d, a.k) != (b.d, b.k):
        raise ValueError(f"dimension mismatch: {(a.d, a.k)} vs {(b.d, b.k)}")
    residual = abs(float(a.u @ a.v) - float(b.u @ b.v))
    for m in range(1, probe_len + 1):
        diff = stats.prediction_table(a, m) - stats.prediction_table(b, m)
        residual = max(residual, float(np.max(np.abs(diff))))
    transform = None
    if residual <= tol:
        S, fit = fit_intertwiner(a, b)
        if fit <= 1e-6 and np.linalg.cond(S) < 1e12:
            transform = S
    return EquivalenceResult(
        kind="linear-transform", residual=residual, tol=tol, transform=transform
    )


def _greedy_column_match(reference: np.ndarray, candidate: np.ndarray) -> tuple[int, ...]:
    # sigma[i] = candidate column assigned to reference column i; ties by index
    k = reference.shape[1]
    cost = np.max(np.abs(reference[:, :, None] - candidate[:, None, :]), axis=0)
    sigma = [-1] * k
    used = set()
    order = sorted(range(k), key=lambda i: cost[i].min())
    for i in order:
        best = min((j for j in range(k) if j not in used), key=lambda j: (cost[i, j], j))
        sigma[i] = best
        used.add(best)
    return tuple(sigma)


def hmm_equivalent_up_to_permutation(
    a: Hmm, b: Hmm, tol: float = 1e-8
) -> EquivalenceResult:
    """Equivalence of HMMs up to hidden-state relabeling.

    Greedily matches b's observation columns to a's (minimal max-abs
    difference, ties broken by column index), then measures Q under the same
    permutation. The residual combines both matrices.
    """
    if (a.d, a.k) != (b.d, b.k):
        raise ValueError(f"dimension mismatch: {(a.d, a.k)} vs {(b.d, b.k)}")
    sigma = _greedy_column_match(a.O, b.O)
    perm = list(sigma)
    o_err = float(np.max(np.abs(a.O - b.O[:, perm])))
    q_err = float(np.max(np.abs(a.Q - b.Q[np.ix_(perm, perm)])))
    return EquivalenceResult(
        kind="state-permutation",
        residual=max(o_err, q_err),
        tol=tol,
        permutation=sigma,
    )
