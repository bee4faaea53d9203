import math

import numpy as np
import pytest

from hmmreal import (
    Hmm,
    SampleBatch,
    aligned_parameter_error,
    build_hankel,
    empirical_joint,
    estimate_and_realize,
    hmm_to_quasi,
    joint_table,
    mirsky_check,
    product_perturbation_check,
    random_hmm,
    realize_quasi,
    sample_sequences,
    shift_cycle_hmm,
    theorem3_sample_size,
    wedin_check,
    windowed_joint,
)


def crisp_two_state():
    Q = np.array([[0.9, 0.1], [0.1, 0.9]])
    O = np.array([[0.95, 0.05], [0.05, 0.95]])
    return Hmm(d=2, k=2, Q=Q, O=O)


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------

def test_sampling_deterministic():
    model = random_hmm(3, 2, seed=0)
    a = sample_sequences(model, 200, 6, seed=11)
    b = sample_sequences(model, 200, 6, seed=11)
    assert np.array_equal(a.sequences, b.sequences)


def test_sampling_chunking_invariant():
    # large batches are generated in row chunks; the stream must match the
    # one-shot draw, so a prefix of a bigger batch equals the smaller batch
    model = random_hmm(2, 2, seed=1)
    small = sample_sequences(model, 1000, 5, seed=3)
    big = sample_sequences(model, (1 << 18) + 500, 5, seed=3)
    assert np.array_equal(big.sequences[:1000], small.sequences)


def test_order_one_model_gives_iid_letters():
    model = random_hmm(3, 1, seed=5)
    batch = sample_sequences(model, 20_000, 2, seed=0)
    freq = np.bincount(batch.sequences.ravel(), minlength=4)[1:] / (2 * 20_000)
    bound = 3 * math.sqrt(math.log(2 * 3 * 1000) / (2 * 2 * 20_000))
    assert np.max(np.abs(freq - model.O[:, 0])) <= bound


def test_deterministic_cycle_sequences():
    # d = k, O = I on a cyclic shift: each sequence walks the cycle and
    # letter frequencies are uniform within the concentration bound
    k = 4
    base = shift_cycle_hmm(k, k, seed=0)
    model = Hmm(d=k, k=k, Q=base.Q, O=np.eye(k), pi=base.pi)
    batch = sample_sequences(model, 50, 10_000, seed=2)
    seqs = batch.sequences.astype(np.int64)
    steps = (seqs[:, 1:] - seqs[:, :-1]) % k
    assert np.all(steps == k - 1)  # state index decreases by 1 cyclically
    freq = np.bincount(seqs[0], minlength=k + 1)[1:] / 10_000
    bound = 3 * math.sqrt(math.log(2 * k * 1000) / (2 * 10_000))
    assert np.max(np.abs(freq - 1 / k)) <= bound


def test_sample_batch_shape_guard():
    with pytest.raises(ValueError):
        SampleBatch(d=2, length=3, count=2, sequences=np.ones((2, 2)), seed=0)


# ---------------------------------------------------------------------------
# empirical tables
# ---------------------------------------------------------------------------

def test_empirical_single_sequence_one_hot():
    model = random_hmm(2, 2, seed=3)
    batch = sample_sequences(model, 1, 3, seed=1)
    table = empirical_joint(batch, 3)
    assert table.values.sum() == 1.0
    assert np.count_nonzero(table.values) == 1
    assert table.provenance == "empirical" and table.sample_count == 1


def test_empirical_marginalization_exact():
    model = random_hmm(2, 3, seed=4)
    batch = sample_sequences(model, 500, 5, seed=7)
    t5 = empirical_joint(batch, 5)
    t4 = empirical_joint(batch, 4)
    # exact as counting measures; float summation may differ in the last ulp
    marginal_counts = np.rint(t5.marginalize_last().values * 500)
    assert np.array_equal(marginal_counts, np.rint(t4.values * 500))
    assert np.max(np.abs(t5.marginalize_last().values - t4.values)) <= 1e-15


def test_empirical_requires_long_enough_sequences():
    model = random_hmm(2, 2, seed=0)
    batch = sample_sequences(model, 10, 3, seed=0)
    with pytest.raises(ValueError):
        empirical_joint(batch, 4)


def test_empirical_concentrates_on_exact_table():
    model = crisp_two_state()
    exact = joint_table(hmm_to_quasi(model), 5)
    T = 100_000
    bound = 3 * math.sqrt(math.log(2 * 32 * 1000) / (2 * T))
    for seed in (0, 1, 2):
        batch = sample_sequences(model, T, 5, seed=seed)
        table = empirical_joint(batch, 5)
        assert np.max(np.abs(table.values - exact.values)) <= bound


def test_windowed_estimator_counts():
    table = windowed_joint(np.array([1, 2, 1, 2]), 2, 2)
    # windows: (1,2), (2,1), (1,2) -> indices 2, 3, 2
    assert np.allclose(table.values, [0.0, 2 / 3, 1 / 3, 0.0])
    assert table.sample_count == 3


# ---------------------------------------------------------------------------
# estimation pipeline
# ---------------------------------------------------------------------------

def test_estimate_and_realize_converges_to_exact_realization():
    model = crisp_two_state()
    quasi = hmm_to_quasi(model)
    exact_real, _ = realize_quasi(build_hankel(joint_table(quasi, 5), 2), expected_k=2)
    batch = sample_sequences(model, 2_000_000, 5, seed=7)
    with pytest.warns(UserWarning):
        estimate, diagnostics = estimate_and_realize(batch, 2, expected_k=2)
    errors = aligned_parameter_error(estimate, exact_real)
    assert max(errors["err_u"], errors["err_v"], errors["err_ops_max"]) <= 1e-3
    assert diagnostics.verify_error is not None
    assert diagnostics.sample_size_surrogate is not None


def test_expected_k_override_truncates_noisy_rank():
    model = random_hmm(2, 2, seed=13)
    batch = sample_sequences(model, 2_000, 5, seed=0)
    with pytest.warns(UserWarning):
        estimate, diagnostics = estimate_and_realize(batch, 2, expected_k=2)
    assert estimate.k == 2
    assert diagnostics.detected_rank > 2


def test_theorem3_surrogate_scaling():
    small = theorem3_sample_size(2, 2, 0.5)
    large = theorem3_sample_size(2, 2, 0.05)
    assert 0 < small < large
    assert theorem3_sample_size(2, 2, 0.0) == math.inf


# ---------------------------------------------------------------------------
# perturbation inequalities
# ---------------------------------------------------------------------------

def test_mirsky_trivial_and_aligned():
    X = np.eye(3)
    assert mirsky_check(X, X) == (0.0, 0.0)
    Xhat = X.copy()
    Xhat[0, 0] += 0.1
    lhs, rhs = mirsky_check(Xhat, X)
    assert lhs == pytest.approx(0.1, abs=1e-12)
    assert rhs == pytest.approx(0.1, abs=1e-12)


def test_mirsky_random_sweep():
    rng = np.random.default_rng(0)
    for _ in range(200):
        X = rng.standard_normal((6, 4))
        E = 0.3 * rng.standard_normal((6, 4))
        lhs, rhs = mirsky_check(X + E, X)
        assert lhs <= rhs + 1e-12


def test_wedin_zero_perturbation():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((6, 3))
    dev_u, dev_v, bound = wedin_check(X, np.zeros_like(X), 3)
    assert dev_u <= 1e-10 and dev_v <= 1e-10


def test_wedin_random_sweep_within_precondition():
    rng = np.random.default_rng(2)
    for _ in range(200):
        m, k = 8, 3
        X = rng.standard_normal((m, k))
        sigma_k = np.linalg.svd(X, compute_uv=False)[k - 1]
        E = rng.standard_normal((m, k))
        E *= 0.1 * sigma_k / np.linalg.norm(E, 2)
        dev_u, dev_v, bound = wedin_check(X, E, k)
        assert dev_u <= bound + 1e-12
        assert dev_v <= bound + 1e-12


def test_wedin_precondition_error():
    X = np.diag([1.0, 1e-6])
    E = np.full((2, 2), 0.1)
    with pytest.raises(ValueError):
        wedin_check(X, E, 2)


def test_product_perturbation_single_factor_tight():
    rng = np.random.default_rng(3)
    A = rng.standard_normal((4, 4))
    Ah = A + 0.01 * rng.standard_normal((4, 4))
    lhs, rhs = product_perturbation_check([A], [Ah])
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_product_perturbation_identical_lists():
    A = np.eye(3)
    lhs, rhs = product_perturbation_check([A, A], [A.copy(), A.copy()])
    assert lhs == 0.0 and rhs == 0.0


def test_product_perturbation_random_triples():
    rng = np.random.default_rng(4)
    for _ in range(100):
        factors = [rng.standard_normal((4, 4)) for _ in range(3)]
        perturbed = [
            A + 0.01 * np.linalg.norm(A, 2) * rng.standard_normal((4, 4)) / 4
            for A in factors
        ]
        lhs, rhs = product_perturbation_check(factors, perturbed)
        assert lhs <= rhs + 1e-12


def test_product_perturbation_precondition():
    A = np.eye(2)
    with pytest.raises(ValueError):
        product_perturbation_check([A], [A + 3 * np.eye(2)])
