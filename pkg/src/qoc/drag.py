"""Three-level leakage model, first-order DRAG and simulated prefactor calibration.

The rotating-frame Hamiltonian is

    H = d1 |1><1| + d2 |2><2|
        + u_x/2 (sx_01 + lam sx_12) + u_y/2 (sy_01 + lam sy_12),

with ``d2 = Delta + 2 d1`` and ``sy_jk = -i|j><k| + i|k><j|``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import erf

from .errors import ZeroAnharmonicity
from .linalg import SIGMA_X, expm_antihermitian
from .optimizers import nelder_mead_minimize


def _ladder(j: int, k: int, kind: str) -> np.ndarray:
    m = np.zeros((3, 3), dtype=complex)
    if kind == "x":
        m[j, k] = m[k, j] = 1
    else:
        m[j, k], m[k, j] = -1j, 1j
    return m


SX01, SX12 = _ladder(0, 1, "x"), _ladder(1, 2, "x")
SY01, SY12 = _ladder(0, 1, "y"), _ladder(1, 2, "y")
P1 = np.diag([0, 1, 0]).astype(complex)
P2 = np.diag([0, 0, 1]).astype(complex)


@dataclass(frozen=True)
class ThreeLevelSystem:
    """Weakly anharmonic three-level system driven near its 0-1 transition.

    ``anharmonicity`` is ``omega_2 - 2 omega_1``; ``drive_frequency``
    defaults to resonance.
    """

    omega1: float = 0.0
    anharmonicity: float = -1.0
    lambda_leak: float = np.sqrt(2)
    drive_frequency: float | None = None

    def __post_init__(self):
        if self.anharmonicity == 0:
            raise ZeroAnharmonicity("anharmonicity must be nonzero")
        if not self.lambda_leak > 0:
            raise ValueError("lambda_leak must be positive")

    @property
    def detuning(self) -> float:
        wd = self.omega1 if self.drive_frequency is None else self.drive_frequency
        return self.omega1 - wd


@dataclass(frozen=True)
class DragPulse:
    """Samples at slice midpoints ``times`` of a gate of length ``gate_time``.

    ``delta1`` is the extra 0-1 detuning (drive-frequency chirp).
    """

    times: np.ndarray
    u_x: np.ndarray
    u_y: np.ndarray
    delta1: np.ndarray
    gate_time: float

    @property
    def n_slices(self) -> int:
        return self.times.size

    @property
    def dt(self) -> float:
        return self.gate_time / self.n_slices

    def scaled(self, ax: float, ay: float, ad: float) -> "DragPulse":
        return replace(self, u_x=(1 + ax) * self.u_x, u_y=(1 + ay) * self.u_y, delta1=(1 + ad) * self.delta1)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "u_x", "u_y", "delta1"])
            for row in zip(self.times, self.u_x, self.u_y, self.delta1):
                w.writerow([format(v, ".17g") for v in row])


def rotating_frame_hamiltonian(sys: ThreeLevelSystem, u_x: float, u_y: float, delta1: float = 0.0) -> np.ndarray:
    """Rotating-frame Hamiltonian for one set of amplitudes; ``delta1`` adds to the static detuning."""
    d1 = sys.detuning + delta1
    d2 = sys.anharmonicity + 2 * d1
    lam = sys.lambda_leak
    return d1 * P1 + d2 * P2 + 0.5 * u_x * (SX01 + lam * SX12) + 0.5 * u_y * (SY01 + lam * SY12)


def lab_frame_hamiltonian(sys: ThreeLevelSystem, u_x: float, u_y: float, t: float) -> np.ndarray:
    """Lab-frame Hamiltonian whose rotating-wave limit is :func:`rotating_frame_hamiltonian`.

    The drive field is ``u_x cos(w_d t) + u_y sin(w_d t)`` on the ladder
    coupling ``sx_01 + lam sx_12``.
    """
    wd = sys.omega1 if sys.drive_frequency is None else sys.drive_frequency
    field = u_x * np.cos(wd * t) + u_y * np.sin(wd * t)
    return sys.omega1 * P1 + (2 * sys.omega1 + sys.anharmonicity) * P2 + field * (SX01 + sys.lambda_leak * SX12)


def rotating_frame(sys: ThreeLevelSystem, t: float) -> np.ndarray:
    """``R(t) = exp(i w_d t (|1><1| + 2|2><2|))`` taking lab states to the rotating frame."""
    wd = sys.omega1 if sys.drive_frequency is None else sys.drive_frequency
    return np.diag(np.exp(1j * wd * t * np.array([0, 1, 2])))


def slice_midpoints(gate_time: float, n_slices: int) -> np.ndarray:
    return (np.arange(n_slices) + 0.5) * gate_time / n_slices


def gaussian_envelope(t, gate_time: float, sigma: float | None = None, area: float = np.pi) -> np.ndarray:
    """Pedestal-subtracted Gaussian centred at ``gate_time/2``, zero at both ends.

    Normalized so the continuous integral over ``[0, gate_time]`` is ``area``.
    """
    sigma = gate_time / 6 if sigma is None else sigma
    t = np.asarray(t, dtype=float)
    half = gate_time / 2
    pedestal = np.exp(-(half**2) / (2 * sigma**2))
    integral = sigma * np.sqrt(2 * np.pi) * erf(half / (np.sqrt(2) * sigma)) - pedestal * gate_time
    return area * (np.exp(-((t - half) ** 2) / (2 * sigma**2)) - pedestal) / integral


def gaussian_pulse(gate_time: float, n_slices: int, sigma: float | None = None, area: float = np.pi) -> DragPulse:
    """Uncorrected Gaussian on slice midpoints, rescaled so the sampled area is exactly ``area``."""
    t = slice_midpoints(gate_time, n_slices)
    ux = gaussian_envelope(t, gate_time, sigma, area)
    ux *= area / (ux.sum() * gate_time / n_slices)
    zeros = np.zeros_like(ux)
    return DragPulse(t, ux, zeros, zeros.copy(), gate_time)


def first_order_drag(envelope: DragPulse, anharmonicity: float, lambda_leak: float = np.sqrt(2)) -> DragPulse:
    """``u_y = -u_x'/Delta`` (centered differences) and ``delta1 = (lam^2 - 4) u_x^2 / (4 Delta)``."""
    if anharmonicity == 0:
        raise ZeroAnharmonicity("anharmonicity must be nonzero")
    ux = envelope.u_x
    uy = -np.gradient(ux, envelope.times) / anharmonicity
    delta1 = (lambda_leak**2 - 4) * ux**2 / (4 * anharmonicity)
    return replace(envelope, u_y=uy, delta1=delta1)


def gate_unitary(sys: ThreeLevelSystem, pulse: DragPulse) -> np.ndarray:
    u = np.eye(3, dtype=complex)
    for ux, uy, d1 in zip(pulse.u_x, pulse.u_y, pulse.delta1):
        u = expm_antihermitian(rotating_frame_hamiltonian(sys, ux, uy, d1), -1j * pulse.dt) @ u
    return u


def gate_metrics(u: np.ndarray, target=SIGMA_X) -> tuple[float, float]:
    """Phase-insensitive infidelity of the 0-1 block against ``target`` and worst leakage."""
    block = u[:2, :2]
    fid = abs(np.vdot(target, block)) ** 2 / 4
    leakage = float(np.max(np.abs(u[2, :2]) ** 2))
    return float(1 - fid), leakage


def simulate_3level_gate(sys: ThreeLevelSystem, pulse: DragPulse, target=SIGMA_X) -> tuple[float, float]:
    """Piecewise-constant evolution of the pulse; returns ``(infidelity, leakage)``."""
    if pulse.n_slices < 100:
        raise ValueError("use at least 100 slices")
    return gate_metrics(gate_unitary(sys, pulse), target)


@dataclass
class CalibrationResult:
    alpha: np.ndarray
    infidelity: float
    initial_infidelity: float
    pulse: DragPulse
    trace: list = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "alpha_x", "alpha_y", "alpha_delta", "measured_infidelity"])
            for k, (a, v) in enumerate(self.trace):
                w.writerow([k] + [format(x, ".17g") for x in (*a, v)])


def calibrate_prefactors(
    sys: ThreeLevelSystem,
    base: DragPulse,
    sigma_meas: float = 0.0,
    seed: int = 0,
    alpha0=(0.0, 0.0, 0.0),
    max_iter: int = 400,
) -> CalibrationResult:
    """Nelder-Mead over ``(alpha_x, alpha_y, alpha_delta)`` scaling ``u_x``, ``u_y`` and ``delta1``.

    Each objective call plays the role of a measurement: simulated
    infidelity plus Gaussian noise of width ``sigma_meas`` from a seeded
    generator. The reported infidelity is noise-free.
    """
    if sigma_meas < 0:
        raise ValueError("sigma_meas must be non-negative")
    rng = np.random.default_rng(seed)
    trace = []

    def measure(alpha):
        inf, _ = simulate_3level_gate(sys, base.scaled(*alpha))
        value = inf + (rng.normal(0.0, sigma_meas) if sigma_meas > 0 else 0.0)
        trace.append((tuple(float(a) for a in alpha), float(value)))
        return value

    alpha0 = np.asarray(alpha0, dtype=float)
    initial, _ = simulate_3level_gate(sys, base.scaled(*alpha0))
    res = nelder_mead_minimize(measure, alpha0, max_iter=max_iter, xatol=1e-9, fatol=1e-16)
    best = base.scaled(*res.x)
    final, _ = simulate_3level_gate(sys, best)
    if final > initial:
        # noisy measurements can mislead the simplex; never report a worse point
        res.x, final, best = alpha0, initial, base.scaled(*alpha0)
    return CalibrationResult(np.asarray(res.x), final, initial, best, trace)
