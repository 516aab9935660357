import csv

import numpy as np
import pytest

from qoc.benchmarking import (
    QuantumChannel,
    SpamModel,
    amplitude_damping_channel,
    apply_channel,
    build_clifford_group_1q,
    depolarizing_channel,
    fit_rb_decay,
    identity_channel,
    interleaved_rb,
    pauli_transfer_matrix,
    random_channel,
    rb_experiment,
    twirl_channel,
    unitary_channel,
)
from qoc.errors import BadIndex, BadProbability, DimMismatch, SingularJacobian
from qoc.linalg import PAULIS, SIGMA_X, SIGMA_Y, SIGMA_Z
from qoc.propagation import unitary_map, vec

GROUP = build_clifford_group_1q()
RHO0 = np.diag([1.0, 0.0]).astype(complex)


def test_identity_channel_keeps_state():
    rho = np.array([[0.7, 0.2 - 0.1j], [0.2 + 0.1j, 0.3]])
    np.testing.assert_allclose(apply_channel(identity_channel(), rho), rho)


def test_depolarizing_on_pure_state():
    p = 0.83
    np.testing.assert_allclose(apply_channel(depolarizing_channel(2, p), RHO0), p * RHO0 + (1 - p) * np.eye(2) / 2, atol=1e-14)


@pytest.mark.parametrize("d", [2, 3, 4])
@pytest.mark.parametrize("p", [0.0, 0.37, 1.0])
def test_depolarizing_affine_form_on_operator_basis(d, p):
    ch = depolarizing_channel(d, p)
    for i in range(d):
        for j in range(d):
            e = np.zeros((d, d), dtype=complex)
            e[i, j] = 1
            np.testing.assert_allclose(apply_channel(ch, e), p * e + (1 - p) * np.trace(e) * np.eye(d) / d, atol=1e-14)


def test_depolarizing_traceless_input():
    out = apply_channel(depolarizing_channel(2, 0.9), SIGMA_X / 2)
    np.testing.assert_allclose(out, 0.9 * SIGMA_X / 2, atol=1e-14)


def test_channel_validation():
    with pytest.raises(BadProbability):
        depolarizing_channel(2, 1.2)
    with pytest.raises(ValueError):
        QuantumChannel((0.5 * np.eye(2),))
    with pytest.raises(DimMismatch):
        apply_channel(identity_channel(2), np.eye(3))


def test_channel_preserves_density_matrices(rng):
    ch = random_channel(3, 4, rng)
    z = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    rho = z @ z.conj().T
    rho /= np.trace(rho)
    out = apply_channel(ch, rho)
    assert np.trace(out) == pytest.approx(1, abs=1e-10)
    np.testing.assert_allclose(out, out.conj().T, atol=1e-12)
    assert np.linalg.eigvalsh(out).min() > -1e-9
    np.testing.assert_allclose(ch.superoperator() @ vec(rho), vec(out), atol=1e-12)


def test_unitary_channel_superoperator_convention(rng):
    u = np.linalg.qr(rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2)))[0]
    np.testing.assert_allclose(unitary_channel(u).superoperator(), unitary_map(u), atol=1e-14)


def test_clifford_group_order_and_axioms():
    assert len(GROUP) == 24
    assert GROUP.index(np.eye(2)) == GROUP.identity
    n = len(GROUP)
    for i in range(n):
        assert GROUP.table[i, GROUP.inverse[i]] == GROUP.identity
        assert GROUP.table[GROUP.identity, i] == i
    for i in range(n):
        for j in range(n):
            prod = GROUP.elements[i] @ GROUP.elements[j]
            assert GROUP.index(prod) == GROUP.table[i, j]


def test_clifford_maps_paulis_to_paulis():
    for c in GROUP.elements:
        for s in (SIGMA_X, SIGMA_Y, SIGMA_Z):
            image = c @ s @ c.conj().T
            overlaps = [abs(np.trace(p @ image)) / 2 for p in (SIGMA_X, SIGMA_Y, SIGMA_Z)]
            assert sorted(np.round(overlaps, 12)) == [0.0, 0.0, 1.0]


def test_index_outside_group():
    with pytest.raises(BadIndex):
        GROUP.index(np.diag([1, np.exp(0.3j)]))


def test_twirl_fixed_points():
    np.testing.assert_allclose(pauli_transfer_matrix(twirl_channel(identity_channel(), GROUP)), np.eye(4), atol=1e-12)
    dep = depolarizing_channel(2, 0.77)
    np.testing.assert_allclose(pauli_transfer_matrix(twirl_channel(dep, GROUP)), pauli_transfer_matrix(dep), atol=1e-12)


def test_twirl_amplitude_damping():
    gamma = 0.1
    r = pauli_transfer_matrix(twirl_channel(amplitude_damping_channel(gamma), GROUP))
    # trace of the original PTM block, shared equally
    p = (2 * np.sqrt(1 - gamma) + 1 - gamma) / 3
    np.testing.assert_allclose(r, np.diag([1, p, p, p]), atol=1e-12)


def test_twirl_of_random_channels_is_depolarizing(rng):
    for _ in range(20):
        r = pauli_transfer_matrix(twirl_channel(random_channel(2, 3, rng), GROUP))
        p = r[1, 1]
        np.testing.assert_allclose(r, np.diag([1, p, p, p]), atol=1e-9)


def test_rb_identity_noise_survival_one():
    curve = rb_experiment([1, 5, 20], 5, seed=3, group=GROUP)
    np.testing.assert_allclose(curve.mean, 1.0, atol=1e-12)


@pytest.mark.parametrize("p", [0.99, 0.9])
def test_rb_depolarizing_closed_form(p):
    lengths = [1, 2, 4, 8, 16, 32]
    curve = rb_experiment(lengths, 10, depolarizing_channel(2, p), seed=5, group=GROUP)
    expected = 0.5 + 0.5 * p ** (np.array(lengths) + 1)
    np.testing.assert_allclose(curve.mean, expected, atol=1e-12)
    assert np.all(np.abs(curve.mean - expected) <= 3 * curve.stderr + 1e-12)


def test_rb_spam_is_length_independent():
    spam = SpamModel(0.98, 0.97)
    curve = rb_experiment([1, 4, 16, 64], 8, spam=spam, seed=2, group=GROUP)
    np.testing.assert_allclose(curve.mean, 0.97 * 0.98 + 0.03 * 0.02, atol=1e-12)


def test_rb_noisy_states_stay_physical(rng):
    ch = random_channel(2, 2, rng)
    curve = rb_experiment([3, 9], 6, ch, SpamModel(0.99, 0.98), seed=4, group=GROUP)
    assert np.all((curve.survivals >= -1e-12) & (curve.survivals <= 1 + 1e-12))


def test_rb_seeded_reproducible(rng):
    ch = random_channel(2, 2, rng)
    a = rb_experiment([2, 8], 5, ch, seed=11, group=GROUP)
    b = rb_experiment([2, 8], 5, ch, seed=11, group=GROUP)
    np.testing.assert_array_equal(a.survivals, b.survivals)


def test_fit_recovers_synthetic_decay():
    n = np.array([1, 2, 4, 8, 16, 32, 64, 128])
    fit = fit_rb_decay(n, 0.5 + 0.5 * 0.98**n)
    assert (fit.p0, fit.amplitude, fit.decay) == pytest.approx((0.5, 0.5, 0.98), abs=1e-6)


def test_fit_invariant_under_shuffling(rng):
    n = np.array([1, 3, 7, 15, 40, 90])
    y = 0.48 + 0.47 * 0.97**n + rng.normal(0, 1e-3, n.size)
    perm = rng.permutation(n.size)
    a, b = fit_rb_decay(n, y), fit_rb_decay(n[perm], y[perm])
    assert (a.p0, a.amplitude, a.decay) == pytest.approx((b.p0, b.amplitude, b.decay), abs=1e-8)


def test_constant_curve_is_unidentifiable():
    with pytest.raises(SingularJacobian):
        fit_rb_decay([1, 2, 4, 8], [0.7, 0.7, 0.7, 0.7])


def test_fit_simulated_depolarizing():
    lengths = 2 ** np.arange(9)
    curve = rb_experiment(lengths, 200, depolarizing_channel(2, 0.99), seed=8, group=GROUP)
    fit = fit_rb_decay(curve.lengths, curve.mean)
    assert abs(fit.decay - 0.99) < 0.002
    assert fit.average_gate_fidelity() == pytest.approx(1 - 0.5 * (1 - fit.decay))


def test_irb_error_free_target_ratio_one():
    res = interleaved_rb(GROUP.index(SIGMA_X), [1, 2, 4, 8, 16, 32], 10, depolarizing_channel(2, 0.98), seed=1)
    assert res.ratio == pytest.approx(1.0, abs=1e-6)


def test_irb_recovers_injected_target_error():
    q = 0.97
    res = interleaved_rb(GROUP.index(SIGMA_Y), [1, 2, 4, 8, 16, 32, 64], 20, depolarizing_channel(2, 0.99),
                         depolarizing_channel(2, q), seed=6)
    assert abs(res.ratio - q) < 0.005


def test_irb_identity_target_doubles_error():
    p = 0.97
    lengths = np.array([1, 2, 4, 8, 16])
    dep = depolarizing_channel(2, p)
    curve = rb_experiment(lengths, 6, dep, seed=9, interleave=GROUP.identity, target_error=dep, group=GROUP)
    np.testing.assert_allclose(curve.mean, 0.5 + 0.5 * p ** (2 * lengths + 1), atol=1e-12)


def test_rb_csv(tmp_path):
    curve = rb_experiment([1, 2, 3], 4, depolarizing_channel(2, 0.95), seed=0, group=GROUP)
    path = tmp_path / "rb.csv"
    curve.to_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["n", "mean_survival", "stderr", "K"]
    assert [int(r[0]) for r in rows[1:]] == [1, 2, 3]
    assert all(r[3] == "4" for r in rows[1:])
    np.testing.assert_allclose([float(r[1]) for r in rows[1:]], curve.mean, rtol=0, atol=0)


def test_pauli_transfer_requires_qubit():
    with pytest.raises(DimMismatch):
        pauli_transfer_matrix(identity_channel(3))
    assert len(PAULIS) == 4
