import numpy as np
import pytest

from qoc.errors import DimMismatch
from qoc.goat import GoatProblem, goat_optimize
from qoc.linalg import SIGMA_X, SIGMA_Y, SIGMA_Z, random_hermitian
from qoc.objectives import PROJECTIVE_SU, Objective
from qoc.open_control import (
    OpenProblem,
    _map_and_derivatives_analytic,
    _map_and_gradient_pwc,
    open_final_map,
    open_optimize,
    open_value_and_gradient,
)
from qoc.propagation import LindbladModel, evolve_lindblad, evolve_pwc, propagate_analytic, unvec, vec
from qoc.system import AnalyticPulse, BoundingTransform, ControlSystem, PiecewisePulse

QUBIT = ControlSystem(0.3 * SIGMA_Z, [SIGMA_X, SIGMA_Y])


def _fd(prob, alpha, h=1e-6):
    g = np.empty_like(alpha)
    for m in range(alpha.size):
        e = np.zeros_like(alpha)
        e[m] = h
        g[m] = (open_value_and_gradient(prob, alpha + e)[0] - open_value_and_gradient(prob, alpha - e)[0]) / (2 * h)
    return g


def _random_model(d, rng, n_ops=2, rate=0.05):
    system = ControlSystem(random_hermitian(d, rng), [random_hermitian(d, rng) for _ in range(2)])
    ops = [rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d)) for _ in range(n_ops)]
    return LindbladModel(system, ops, [rate] * n_ops)


def _random_unitary(d, rng):
    return np.linalg.qr(rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d)))[0]


def _fourier(rng, n_controls=2, horizon=1.5):
    params = np.stack([rng.uniform(-1, 1, (n_controls, 2)), rng.uniform(0.5, 3, (n_controls, 2)),
                       rng.uniform(0, 6, (n_controls, 2))], axis=-1)
    return AnalyticPulse("fourier", params, horizon, "sine")


def test_zero_rates_reduce_to_unitary_case(rng):
    pulse = _fourier(rng)
    target = _random_unitary(2, rng)
    prob = OpenProblem(LindbladModel(QUBIT), pulse, target)
    value, _, phi = open_value_and_gradient(prob, prob.initial_alpha())
    u = propagate_analytic(QUBIT, pulse)
    closed = 1 - abs(np.trace(target.conj().T @ u)) ** 2 / 4
    assert value == pytest.approx(closed, abs=1e-8)


def test_parameter_not_in_hamiltonian_has_zero_gradient(rng):
    system = ControlSystem(0.3 * SIGMA_Z, [SIGMA_X, np.zeros((2, 2))])
    model = LindbladModel(system, [SIGMA_Z], [0.05])
    prob = OpenProblem(model, _fourier(rng), SIGMA_X)
    _, g, _ = open_value_and_gradient(prob, prob.initial_alpha())
    assert np.all(g[6:] == 0) and np.any(g[:6] != 0)


def test_dephasing_map_closed_form():
    gamma, t = 0.07, 1.3
    model = LindbladModel(ControlSystem(np.zeros((2, 2)), [SIGMA_Z]), [SIGMA_Z], [gamma])
    f = evolve_lindblad(model, PiecewisePulse([[0.0]], t))
    rho = np.array([[0.6, 0.3 - 0.2j], [0.3 + 0.2j, 0.4]])
    out = unvec(f @ vec(rho), 2)
    expected = rho.copy()
    expected[0, 1] *= np.exp(-4 * gamma * t)
    expected[1, 0] *= np.exp(-4 * gamma * t)
    np.testing.assert_allclose(out, expected, atol=1e-8)


def test_dephasing_fidelity_floor(rng):
    gamma, t = 0.05, 2.0
    model = LindbladModel(ControlSystem(0.2 * SIGMA_Z, [SIGMA_Z]), [SIGMA_Z], [gamma])
    floor = (2 + 2 * np.exp(-0.4)) / 4
    for _ in range(5):
        prob = OpenProblem(model, PiecewisePulse(rng.normal(size=(6, 1)), t / 6), np.eye(2))
        _, _, phi = open_value_and_gradient(prob, prob.initial_alpha())
        assert phi <= floor + 1e-12
    # the floor is reached when the net z rotation vanishes
    prob = OpenProblem(model, PiecewisePulse(np.full((4, 1), -0.2), t / 4), np.eye(2))
    assert open_value_and_gradient(prob, prob.initial_alpha())[2] == pytest.approx(floor, abs=1e-12)


@pytest.mark.parametrize("d", [2, 3])
def test_analytic_gradient_matches_fd(d, rng):
    model = _random_model(d, rng)
    prob = OpenProblem(model, _fourier(rng, horizon=1.0), _random_unitary(d, rng))
    alpha = prob.initial_alpha()
    _, g, _ = open_value_and_gradient(prob, alpha)
    fd = _fd(prob, alpha)
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-5 * np.max(np.abs(fd)))


@pytest.mark.parametrize("d", [2, 3])
def test_pwc_gradient_matches_fd(d, rng):
    model = _random_model(d, rng)
    prob = OpenProblem(model, PiecewisePulse(rng.normal(size=(5, 2)), 0.2), _random_unitary(d, rng))
    alpha = prob.initial_alpha()
    _, g, _ = open_value_and_gradient(prob, alpha)
    fd = _fd(prob, alpha)
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-6 * np.max(np.abs(fd)))


def test_bounded_subset_gradient_matches_fd(rng):
    model = _random_model(2, rng)
    pulse = _fourier(rng)
    bounds = [BoundingTransform(-2, 2) if m % 3 == 0 else None for m in range(pulse.n_params)]
    prob = OpenProblem(model, pulse, SIGMA_X, bounds=bounds, free=[0, 1, 6, 9])
    alpha = prob.initial_alpha() + 0.1
    _, g, _ = open_value_and_gradient(prob, alpha)
    np.testing.assert_allclose(g, _fd(prob, alpha), rtol=1e-5, atol=1e-9)


def test_gradient_path_map_matches_plain_propagation(rng):
    model = _random_model(3, rng)
    pulse = _fourier(rng)
    f, _ = _map_and_derivatives_analytic(model, pulse, np.arange(3), 1e-10, 1e-12)
    np.testing.assert_allclose(f, evolve_lindblad(model, pulse, 1e-10, 1e-12), atol=1e-8)
    pwc = PiecewisePulse(rng.normal(size=(4, 2)), 0.3)
    f, _ = _map_and_gradient_pwc(model, pwc, np.eye(9))
    np.testing.assert_allclose(f, evolve_lindblad(model, pwc), atol=1e-12)


def test_unitary_map_convention(rng):
    pwc = PiecewisePulse(rng.normal(size=(3, 2)), 0.4)
    f = evolve_lindblad(LindbladModel(QUBIT), pwc)
    u = evolve_pwc(QUBIT, pwc)[0].final
    rho = np.array([[0.5, 0.1j], [-0.1j, 0.5]])
    np.testing.assert_allclose(unvec(f @ vec(rho), 2), u @ rho @ u.conj().T, atol=1e-12)


def test_problem_validation():
    with pytest.raises(DimMismatch):
        OpenProblem(LindbladModel(QUBIT), PiecewisePulse(np.zeros((2, 2)), 0.1), np.eye(3))
    with pytest.raises(DimMismatch):
        LindbladModel(QUBIT, [SIGMA_Z], [0.1, 0.2])
    with pytest.raises(ValueError):
        LindbladModel(QUBIT, [SIGMA_Z], [-0.1])


def _x_gate_problem(gamma):
    system = ControlSystem(np.zeros((2, 2)), [SIGMA_X])
    pulse = AnalyticPulse("fourier", [[0.6, 1.0, 0.3]], 2.0, "sine")
    bounds = [BoundingTransform(-1, 1), None, None]
    model = LindbladModel(system, [SIGMA_Z], [gamma])
    return system, pulse, bounds, OpenProblem(model, pulse, SIGMA_X, bounds=bounds)


def test_zero_rate_optimum_matches_goat():
    system, pulse, bounds, prob = _x_gate_problem(0.0)
    closed = goat_optimize(GoatProblem(system, pulse, Objective(PROJECTIVE_SU, SIGMA_X), bounds=bounds),
                           infidelity_target=1e-12)
    run = open_optimize(prob, infidelity_target=1e-13)
    assert abs((1 - np.sqrt(run.fidelities[-1])) - closed.values[-1]) < 1e-6
    np.testing.assert_allclose(open_final_map(prob, run.alpha), evolve_lindblad(prob.model, run.pulse), atol=1e-12)


def _best_open_infidelity(gamma):
    _, _, _, prob = _x_gate_problem(gamma)
    run = open_optimize(prob, max_iter=200)
    return run.values[-1]


def test_small_rates_cost_order_gamma_tg():
    base = _best_open_infidelity(0.0)
    for gamma in (1e-4, 1e-3):
        excess = _best_open_infidelity(gamma) - base
        assert 0 < excess <= 4 * gamma * 2.0


def test_stronger_dephasing_worsens_optimum():
    values = [_best_open_infidelity(g) for g in (0.0, 0.01, 0.05)]
    assert values[0] < values[1] < values[2]


def test_open_run_trace():
    _, _, _, prob = _x_gate_problem(0.02)
    run = open_optimize(prob, max_iter=50)
    assert run.method == "open"
    assert all(b <= a + 1e-15 for a, b in zip(run.values, run.values[1:]))
    assert run.fidelities[-1] < 1
