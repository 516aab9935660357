import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qoc.errors import CacheMismatch, DimMismatch
from qoc.grape import (
    expm_directional_derivative,
    grape_gate_gradient,
    grape_optimize,
    grape_state_gradient,
    pwc_fidelity,
    pwc_value_and_gradient,
    update_step,
)
from qoc.linalg import SIGMA_X, SIGMA_Y, SIGMA_Z, basis_state, expm_antihermitian, hermitian_eig, random_hermitian
from qoc.objectives import GATE_FIDELITY, PROJECTIVE_SU, STATE_OVERLAP, Objective
from qoc.propagation import backward_pass, evolve_pwc, forward_pass
from qoc.system import ControlSystem, PiecewisePulse


def _fd_expm(x, b, s, h=1e-5):
    return (expm_antihermitian(x + h * b, s) - expm_antihermitian(x - h * b, s)) / (2 * h)


def test_directional_derivative_zero_direction(rng):
    x = random_hermitian(3, rng)
    assert np.all(expm_directional_derivative(hermitian_eig(x), np.zeros((3, 3)), -0.3j) == 0)


def test_directional_derivative_commuting_case():
    e = np.array([0.3, -1.2, 2.0])
    b = np.diag([0.5, 1.5, -0.7])
    s = -0.4j
    d = expm_directional_derivative(hermitian_eig(np.diag(e)), b, s)
    np.testing.assert_allclose(d, np.diag(s * np.diag(b) * np.exp(s * e)), atol=1e-14)


@given(st.integers(0, 10**6))
def test_directional_derivative_matches_fd(seed):
    rng = np.random.default_rng(seed)
    x, b = random_hermitian(4, rng), random_hermitian(4, rng)
    s = -1j * rng.uniform(0.1, 2.0)
    d = expm_directional_derivative(hermitian_eig(x), b, s)
    fd = _fd_expm(x, b, s)
    assert np.linalg.norm(d - fd) / np.linalg.norm(fd) < 1e-6


def test_degenerate_branch_continuity(rng):
    v = np.linalg.qr(rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3)))[0]
    b = random_hermitian(3, rng)
    s = -0.8j
    exact = v @ np.diag([0.4, 0.4, -1.0]) @ v.conj().T
    near = v @ np.diag([0.4, 0.4 + 1e-9, -1.0]) @ v.conj().T
    d0 = expm_directional_derivative(hermitian_eig(exact), b, s)
    d1 = expm_directional_derivative(hermitian_eig(near), b, s)
    assert np.linalg.norm(d0 - d1) < 1e-6
    fd = _fd_expm(exact, b, s)
    assert np.linalg.norm(d0 - fd) / np.linalg.norm(fd) < 1e-6


def _random_problem(rng, d, n, kind):
    system = ControlSystem(random_hermitian(d, rng), [random_hermitian(d, rng) for _ in range(2)])
    pulse = PiecewisePulse(rng.normal(size=(n, 2)), rng.uniform(0.05, 0.3))
    if kind == STATE_OVERLAP:
        obj = Objective(kind, basis_state(d, d - 1), basis_state(d, 0))
    else:
        obj = Objective(kind, np.linalg.qr(rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d)))[0])
    return system, pulse, obj


def _fd_value_gradient(system, pulse, obj, h=1e-6):
    g = np.empty_like(pulse.values)
    for idx in np.ndindex(pulse.values.shape):
        e = np.zeros_like(pulse.values)
        e[idx] = h
        vp = pwc_value_and_gradient(system, pulse.with_values(pulse.values + e), obj)[0]
        vm = pwc_value_and_gradient(system, pulse.with_values(pulse.values - e), obj)[0]
        g[idx] = (vp - vm) / (2 * h)
    return g


@pytest.mark.parametrize("kind", [STATE_OVERLAP, GATE_FIDELITY, PROJECTIVE_SU])
@pytest.mark.parametrize("d,n", [(3, 8), (4, 6)])
def test_gradient_matches_fd(kind, d, n, rng):
    system, pulse, obj = _random_problem(rng, d, n, kind)
    _, g, _ = pwc_value_and_gradient(system, pulse, obj)
    fd = _fd_value_gradient(system, pulse, obj)
    assert np.max(np.abs(g - fd)) / np.max(np.abs(fd)) < 1e-6


def test_first_order_gradient_is_approximate(rng):
    system, pulse, obj = _random_problem(rng, 3, 8, GATE_FIDELITY)
    _, exact, _ = pwc_value_and_gradient(system, pulse, obj, exact=True)
    _, approx, _ = pwc_value_and_gradient(system, pulse, obj, exact=False)
    rel = np.max(np.abs(exact - approx)) / np.max(np.abs(exact))
    assert 1e-8 < rel < 0.5


def test_single_slice_closed_form():
    system = ControlSystem(np.zeros((2, 2)), [SIGMA_X])
    u, dt = 0.37, 0.8
    fwd, bwd = evolve_pwc(system, PiecewisePulse([[u]], dt), basis_state(2, 0), basis_state(2, 1))
    g = grape_state_gradient(fwd, bwd, system)
    assert g[0, 0] == pytest.approx(dt * np.sin(2 * u * dt), rel=1e-12)


def test_gradient_vanishes_at_optimum():
    system = ControlSystem(np.zeros((2, 2)), [SIGMA_X])
    pulse = PiecewisePulse.constant(10, np.pi / 2, [1.0])
    fwd, bwd = evolve_pwc(system, pulse, basis_state(2, 0), basis_state(2, 1))
    assert np.max(np.abs(grape_state_gradient(fwd, bwd, system))) < 1e-8
    fwd, bwd = evolve_pwc(system, pulse, target=SIGMA_X)
    assert np.max(np.abs(grape_gate_gradient(fwd, bwd, system))) < 1e-8


def test_gate_gradient_ascent_direction():
    system = ControlSystem(np.zeros((2, 2)), [SIGMA_X])
    pulse = PiecewisePulse.constant(5, 1.0, [0.8])
    fwd, bwd = evolve_pwc(system, pulse, target=SIGMA_X)
    g = grape_gate_gradient(fwd, bwd, system)
    obj = Objective(GATE_FIDELITY, SIGMA_X)
    before = pwc_fidelity(system, pulse, obj)
    after = pwc_fidelity(system, pulse.with_values(pulse.values + 1e-3 * g), obj)
    assert after > before


def test_gradient_kind_checks(rng):
    system, pulse, _ = _random_problem(rng, 2, 3, GATE_FIDELITY)
    fwd = forward_pass(system, pulse, basis_state(2, 0))
    with pytest.raises(DimMismatch):
        grape_gate_gradient(fwd, backward_pass(fwd, basis_state(2, 1)), system)
    other = forward_pass(system, pulse.with_values(pulse.values + 1), basis_state(2, 0))
    with pytest.raises(CacheMismatch):
        grape_state_gradient(fwd, backward_pass(other, basis_state(2, 1)), system)


@pytest.mark.parametrize("scheme", ["concurrent", "sequential", "hybrid"])
def test_update_zero_gradient_keeps_pulse(scheme):
    system = ControlSystem(np.zeros((2, 2)), [SIGMA_X])
    pulse = PiecewisePulse.constant(6, np.pi / 2, [1.0])
    obj = Objective(STATE_OVERLAP, basis_state(2, 1), basis_state(2, 0))
    new = update_step(system, pulse, obj, scheme, 0.5, block=2)
    np.testing.assert_allclose(new.values, pulse.values, atol=1e-12)


def test_concurrent_plus_minus_first_order(rng):
    system, pulse, obj = _random_problem(rng, 2, 6, GATE_FIDELITY)
    v0, g, _ = pwc_value_and_gradient(system, pulse, obj)
    eps = 1e-5
    vp = pwc_value_and_gradient(system, update_step(system, pulse, obj, "concurrent", eps, grad=g), obj)[0]
    vm = pwc_value_and_gradient(system, pulse.with_values(pulse.values + eps * g), obj)[0]
    # opposite steps change the value by opposite amounts to first order
    assert (vp - v0) + (vm - v0) == pytest.approx(0.0, abs=10 * eps**2 * np.sum(g * g) + 1e-14)
    assert vp - v0 == pytest.approx(-eps * np.sum(g * g), rel=1e-3)


def test_sequential_sweep_is_slice_monotone():
    system = ControlSystem(0.3 * SIGMA_Z, [SIGMA_X, SIGMA_Y])
    pulse = PiecewisePulse(np.full((8, 2), 0.2), 0.25)
    obj = Objective(GATE_FIDELITY, SIGMA_X)
    eps = 1.0
    while True:
        values = [pwc_fidelity(system, pulse, obj)]
        cur = pulse
        ok = True
        for k in range(pulse.n_slices):
            # one slice at a time: update only slice k using the sequential scheme on a masked copy
            nxt = update_step(system, cur, obj, "hybrid", eps, block=pulse.n_slices)
            trial = cur.with_values(np.where(np.arange(8)[:, None] == k, nxt.values, cur.values))
            values.append(pwc_fidelity(system, trial, obj))
            if values[-1] < values[-2] - 1e-15:
                ok = False
                break
            cur = trial
        if ok:
            break
        eps /= 2
    assert eps > 1e-6
    assert all(b >= a - 1e-15 for a, b in zip(values, values[1:]))


def test_sequential_update_improves():
    system = ControlSystem(0.3 * SIGMA_Z, [SIGMA_X, SIGMA_Y])
    pulse = PiecewisePulse(np.full((8, 2), 0.2), 0.25)
    obj = Objective(GATE_FIDELITY, SIGMA_X)
    before = pwc_fidelity(system, pulse, obj)
    after = pwc_fidelity(system, update_step(system, pulse, obj, "sequential", 0.1), obj)
    assert after > before


@pytest.mark.parametrize("scheme,algorithm", [("concurrent", "gradient"), ("sequential", "gradient"), ("hybrid", "gradient"), ("concurrent", "lbfgs")])
def test_qubit_state_transfer_at_speed_limit(scheme, algorithm):
    system = ControlSystem(np.zeros((2, 2)), [SIGMA_X], amplitude_limits=[(-1.0, 1.0)])
    pulse = PiecewisePulse(np.full((10, 1), 0.3), np.pi / 2 / 10)
    obj = Objective(STATE_OVERLAP, basis_state(2, 1), basis_state(2, 0))
    run = grape_optimize(system, pulse, obj, scheme=scheme, block=3, algorithm=algorithm,
                         max_iter=2000, fidelity_target=1 - 1e-9)
    assert run.final_fidelity > 1 - 1e-8
    assert np.all(np.abs(run.pulse.values) <= 1.0)


def test_start_at_optimum_stops():
    system = ControlSystem(np.zeros((2, 2)), [SIGMA_X])
    pulse = PiecewisePulse.constant(4, np.pi / 2, [1.0])
    obj = Objective(STATE_OVERLAP, basis_state(2, 1), basis_state(2, 0))
    run = grape_optimize(system, pulse, obj, fidelity_target=1 - 1e-12)
    assert run.n_iter <= 1 and run.converged


def test_three_level_gate_monotone_trace():
    a = np.diag(np.sqrt([1.0, 2.0]), 1).astype(complex)
    system = ControlSystem(np.diag([0.0, 0.0, -1.0]).astype(complex), [a + a.T, -1j * (a - a.T)])
    target = np.eye(3, dtype=complex)
    target[:2, :2] = SIGMA_X
    pulse = PiecewisePulse(np.full((20, 2), 0.1), 0.3)
    run = grape_optimize(system, pulse, Objective(GATE_FIDELITY, target), max_iter=100)
    assert run.final_fidelity > run.fidelities[0]
    assert all(b >= a - 1e-15 for a, b in zip(run.fidelities, run.fidelities[1:]))
