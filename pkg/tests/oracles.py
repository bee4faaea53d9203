"""Independent brute-force oracles used to pin expected values.

These enumerate hidden paths explicitly and never touch the operator-product
machinery they are used to check.
"""

import itertools

import numpy as np


def path_enumeration_joint(model, string) -> float:
    """P(y_1..y_N = string) by summing over all k^N hidden paths."""
    total = 0.0
    N = len(string)
    for path in itertools.product(range(model.k), repeat=N):
        p = model.pi[path[0]]
        for t in range(N):
            p *= model.O[string[t] - 1, path[t]]
            if t + 1 < N:
                p *= model.Q[path[t + 1], path[t]]
        total += p
    return float(total)


def path_enumeration_table(model, N: int) -> np.ndarray:
    """All length-N string probabilities by vectorized path enumeration."""
    d, k = model.d, model.k
    paths = np.indices((k,) * N).reshape(N, -1).T
    weights = model.pi[paths[:, 0]].copy()
    for t in range(N - 1):
        weights *= model.Q[paths[:, t + 1], paths[:, t]]
    strings = np.indices((d,) * N).reshape(N, -1).T
    emissions = model.O[strings[:, None, :], paths[None, :, :]].prod(axis=2)
    return emissions @ weights


def conditional_future_oracle(model, n: int) -> np.ndarray:
    """P(y_1..y_n = f | x_0 = m) by explicit path enumeration, rows in index order."""
    d, k = model.d, model.k
    out = np.zeros((d**n, k))
    for row, f in enumerate(itertools.product(range(1, d + 1), repeat=n)):
        for m in range(k):
            total = 0.0
            for path in itertools.product(range(k), repeat=n):
                p = model.Q[path[0], m]
                for t in range(n):
                    p *= model.O[f[t] - 1, path[t]]
                    if t + 1 < n:
                        p *= model.Q[path[t + 1], path[t]]
                total += p
            out[row, m] = total
    return out
