"""Quantum channels, the single-qubit Clifford group and simulated randomized benchmarking."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import BadIndex, BadProbability, DimMismatch
from .linalg import PAULIS, SIGMA_X, SIGMA_Y, SIGMA_Z, dag, expm_antihermitian
from .optimizers import OptimizeResult, gauss_newton_fit
from .propagation import unvec, vec
from .system import BoundingTransform, bound_param

KRAUS_ATOL = 1e-9


@dataclass(frozen=True)
class QuantumChannel:
    """Kraus representation ``rho -> sum_k A_k rho A_k^+``."""

    kraus: tuple

    def __post_init__(self):
        ops = tuple(np.asarray(a, dtype=complex) for a in self.kraus)
        if not ops:
            raise ValueError("a channel needs at least one Kraus operator")
        d = ops[0].shape[0]
        if any(a.shape != (d, d) for a in ops):
            raise DimMismatch("Kraus operators must be square and of equal size")
        total = sum(dag(a) @ a for a in ops)
        if np.linalg.norm(total - np.eye(d)) > KRAUS_ATOL:
            raise ValueError("Kraus operators are not trace preserving")
        object.__setattr__(self, "kraus", ops)

    @property
    def dim(self) -> int:
        return self.kraus[0].shape[0]

    def superoperator(self) -> np.ndarray:
        """Matrix acting on column-stacked density matrices."""
        return sum(np.kron(a.conj(), a) for a in self.kraus)

    def __call__(self, rho):
        return apply_channel(self, rho)


def apply_channel(ch: QuantumChannel, rho) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (ch.dim, ch.dim):
        raise DimMismatch(f"state of shape {rho.shape} does not fit a {ch.dim}-level channel")
    return sum(a @ rho @ dag(a) for a in ch.kraus)


def identity_channel(d: int = 2) -> QuantumChannel:
    return QuantumChannel((np.eye(d),))


def unitary_channel(u) -> QuantumChannel:
    return QuantumChannel((np.asarray(u, dtype=complex),))


def weyl_operators(d: int) -> list:
    """Clock-and-shift basis ``X^a Z^b``; ``W_00`` is the identity."""
    shift = np.roll(np.eye(d), 1, axis=0)
    clock = np.diag(np.exp(2j * np.pi * np.arange(d) / d))
    return [np.linalg.matrix_power(shift, a) @ np.linalg.matrix_power(clock, b) for a in range(d) for b in range(d)]


def depolarizing_channel(d: int, p: float) -> QuantumChannel:
    """``rho -> p rho + (1 - p) Tr(rho) I / d``.

    Uses ``sum_W W rho W^+ = d Tr(rho) I`` over the ``d^2`` Weyl operators,
    so the Kraus weights are ``p + (1-p)/d^2`` on the identity and
    ``(1-p)/d^2`` on the others.
    """
    if not 0.0 <= p <= 1.0:
        raise BadProbability(f"p = {p} outside [0, 1]")
    ws = weyl_operators(d)
    ops = [np.sqrt(p + (1 - p) / d**2) * ws[0]]
    ops += [np.sqrt((1 - p) / d**2) * w for w in ws[1:]]
    return QuantumChannel(tuple(ops))


def amplitude_damping_channel(gamma: float) -> QuantumChannel:
    if not 0.0 <= gamma <= 1.0:
        raise BadProbability(f"gamma = {gamma} outside [0, 1]")
    a0 = np.array([[1, 0], [0, np.sqrt(1 - gamma)]])
    a1 = np.array([[0, np.sqrt(gamma)], [0, 0]])
    return QuantumChannel((a0, a1))


def random_channel(d: int, n_kraus: int, rng: np.random.Generator) -> QuantumChannel:
    """Random CPTP map from a Haar-like isometry ``C^d -> C^d (x) C^n``."""
    z = rng.normal(size=(d * n_kraus, d)) + 1j * rng.normal(size=(d * n_kraus, d))
    q, _ = np.linalg.qr(z)
    return QuantumChannel(tuple(q[k * d:(k + 1) * d] for k in range(n_kraus)))


def pauli_transfer_matrix(ch: QuantumChannel) -> np.ndarray:
    """Qubit ``R_ij = Tr(sigma_i Lambda(sigma_j)) / 2`` in the order I, X, Y, Z."""
    if ch.dim != 2:
        raise DimMismatch("Pauli transfer matrices are defined here for qubits")
    return np.array([[np.real(np.trace(si @ apply_channel(ch, sj))) / 2 for sj in PAULIS] for si in PAULIS])


# --- Clifford group ---------------------------------------------------------

def canonical_phase(u: np.ndarray) -> np.ndarray:
    """Remove the global phase so the first nonzero entry is real and positive."""
    flat = u.ravel()
    k = int(np.argmax(np.abs(flat) > 1e-9))
    return u * (abs(flat[k]) / flat[k])


def _key(u: np.ndarray) -> tuple:
    c = np.round(canonical_phase(u), 8) + 0.0  # also folds -0.0 into 0.0
    return tuple(np.concatenate([c.real.ravel(), c.imag.ravel()]))


@dataclass(frozen=True)
class CliffordGroup1Q:
    """Phase-canonical single-qubit Cliffords with exact group tables.

    ``table[i, j]`` indexes ``C_i C_j`` and ``inverse[i]`` indexes ``C_i^+``.
    """

    elements: np.ndarray
    table: np.ndarray
    inverse: np.ndarray
    identity: int

    def __len__(self) -> int:
        return len(self.elements)

    def index(self, u) -> int:
        key = _key(np.asarray(u, dtype=complex))
        for k, c in enumerate(self.elements):
            if _key(c) == key:
                return k
        raise BadIndex("unitary is not in the group")

    def superoperators(self) -> np.ndarray:
        return np.array([np.kron(c.conj(), c) for c in self.elements])


def build_clifford_group_1q() -> CliffordGroup1Q:
    """Close the quarter turns ``exp(-+ i pi sigma / 4)`` under multiplication."""
    gens = [expm_antihermitian(s, sign * 1j * np.pi / 4) for s in (SIGMA_X, SIGMA_Y, SIGMA_Z) for sign in (-1, 1)]
    elements = [canonical_phase(np.eye(2, dtype=complex))]
    keys = {_key(elements[0]): 0}
    frontier = [elements[0]]
    while frontier:
        nxt = []
        for u in frontier:
            for g in gens:
                w = canonical_phase(g @ u)
                k = _key(w)
                if k not in keys:
                    keys[k] = len(elements)
                    elements.append(w)
                    nxt.append(w)
        frontier = nxt
    n = len(elements)
    table = np.empty((n, n), dtype=int)
    for i, a in enumerate(elements):
        for j, b in enumerate(elements):
            table[i, j] = keys[_key(a @ b)]
    inverse = np.array([keys[_key(dag(a))] for a in elements])
    return CliffordGroup1Q(np.array(elements), table, inverse, 0)


def twirl_channel(ch: QuantumChannel, group: CliffordGroup1Q | None = None) -> QuantumChannel:
    """Exact group average ``rho -> (1/|G|) sum_C C^+ Lambda(C rho C^+) C``."""
    group = build_clifford_group_1q() if group is None else group
    if ch.dim != group.elements.shape[1]:
        raise DimMismatch("channel and group dimensions differ")
    w = 1 / np.sqrt(len(group))
    return QuantumChannel(tuple(w * dag(c) @ a @ c for c in group.elements for a in ch.kraus))


# --- randomized benchmarking --------------------------------------------------

@dataclass(frozen=True)
class SpamModel:
    """Preparation of ``|0>`` with probability ``prep_fidelity`` (else ``|1>``) and a
    measurement reporting the true outcome with probability ``meas_fidelity``."""

    prep_fidelity: float = 1.0
    meas_fidelity: float = 1.0

    def __post_init__(self):
        for p in (self.prep_fidelity, self.meas_fidelity):
            if not 0.0 <= p <= 1.0:
                raise BadProbability(f"probability {p} outside [0, 1]")

    def initial_state(self) -> np.ndarray:
        return np.diag([self.prep_fidelity, 1 - self.prep_fidelity]).astype(complex)

    def survival(self, rho) -> float:
        p0 = float(np.real(rho[0, 0]))
        return self.meas_fidelity * p0 + (1 - self.meas_fidelity) * (1 - p0)


@dataclass
class RBCurve:
    lengths: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    n_sequences: int
    survivals: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "mean_survival", "stderr", "K"])
            for n, m, s in zip(self.lengths, self.mean, self.stderr):
                w.writerow([int(n), format(m, ".17g"), format(s, ".17g"), self.n_sequences])


def rb_experiment(
    lengths: Sequence[int],
    n_sequences: int,
    error_channel: QuantumChannel | None = None,
    spam: SpamModel | None = None,
    seed: int = 0,
    interleave: int | None = None,
    target_error: QuantumChannel | None = None,
    group: CliffordGroup1Q | None = None,
) -> RBCurve:
    """Simulate single-qubit (interleaved) randomized benchmarking.

    Each sequence applies ``n`` random Cliffords, each followed by
    ``error_channel``, then the inverting Clifford, also followed by
    ``error_channel``. With ``interleave`` the target Clifford follows every
    random Clifford and is itself followed by ``target_error`` only (a perfect
    gate by default); the inverse then accounts for the interleaved gates.
    """
    if any(int(n) < 1 for n in lengths) or n_sequences < 1:
        raise ValueError("lengths and sequence count must be positive")
    group = build_clifford_group_1q() if group is None else group
    spam = SpamModel() if spam is None else spam
    err = np.eye(4) if error_channel is None else error_channel.superoperator()
    supers = group.superoperators()
    noisy = err @ supers
    target = None
    if interleave is not None:
        if not 0 <= interleave < len(group):
            raise BadIndex(f"Clifford index {interleave} outside the group")
        terr = np.eye(4) if target_error is None else target_error.superoperator()
        target = terr @ supers[interleave]
    rng = np.random.default_rng(seed)
    rho0 = vec(spam.initial_state())
    lengths = np.asarray(lengths, dtype=int)
    surv = np.empty((lengths.size, n_sequences))
    for li, n in enumerate(lengths):
        for s in range(n_sequences):
            seq = rng.integers(0, len(group), size=n)
            v = rho0
            total = group.identity
            for c in seq:
                v = noisy[c] @ v
                total = group.table[c, total]
                if target is not None:
                    v = target @ v
                    total = group.table[interleave, total]
            v = noisy[group.inverse[total]] @ v
            surv[li, s] = spam.survival(unvec(v, 2))
    mean = surv.mean(axis=1)
    stderr = surv.std(axis=1, ddof=1) / np.sqrt(n_sequences) if n_sequences > 1 else np.zeros(lengths.size)
    return RBCurve(lengths, mean, stderr, n_sequences, surv)


DECAY_BOUND = BoundingTransform(0.0, 1.0)


@dataclass
class RBFit:
    p0: float
    amplitude: float
    decay: float
    result: OptimizeResult

    def average_gate_fidelity(self, d: int = 2) -> float:
        """Average fidelity of the depolarizing channel with parameter ``decay``."""
        return 1 - (d - 1) * (1 - self.decay) / d


def _decay_model(n, theta):
    lam, _ = bound_param(DECAY_BOUND, theta[2])
    return theta[0] + theta[1] * lam**n


def _decay_jacobian(n, theta):
    lam, slope = bound_param(DECAY_BOUND, theta[2])
    lam_n = lam**n
    dlam = theta[1] * n * lam ** (n - 1) * slope
    return np.stack([np.ones_like(n), lam_n, dlam], axis=1)


def fit_rb_decay(lengths, survival, guess: Sequence[float] | None = None) -> RBFit:
    """Fit ``p(n) = p0 + A lambda^n`` with ``lambda`` kept in ``[0, 1]`` by the sine map."""
    n = np.asarray(lengths, dtype=float)
    y = np.asarray(survival, dtype=float)
    if n.size < 3:
        raise ValueError("need at least 3 sequence lengths")
    if guess is None:
        p0 = 0.5
        a = y[0] - p0
        ratio = (y[-1] - p0) / a if a != 0 else 1.0
        lam = np.clip(ratio, 1e-6, 1.0) ** (1.0 / max(n[-1] - n[0], 1.0))
        # lambda^n0 is folded into the amplitude guess
        guess = (p0, a / lam ** n[0], float(np.clip(lam, 0.05, 0.999)))
    theta0 = np.array([guess[0], guess[1], DECAY_BOUND.inverse(guess[2])])
    res = gauss_newton_fit(_decay_model, n, y, theta0, _decay_jacobian)
    lam, _ = bound_param(DECAY_BOUND, res.x[2])
    return RBFit(float(res.x[0]), float(res.x[1]), float(lam), res)


@dataclass
class IRBResult:
    reference: RBFit
    interleaved: RBFit
    ratio: float

    @property
    def gate_fidelity(self) -> float:
        """Average fidelity of the interleaved gate's error, ``1 - (1 - ratio)/2`` for a qubit."""
        return 1 - (1 - self.ratio) / 2


def interleaved_rb(
    target: int,
    lengths: Sequence[int],
    n_sequences: int,
    error_channel: QuantumChannel | None = None,
    target_error: QuantumChannel | None = None,
    spam: SpamModel | None = None,
    seed: int = 0,
) -> IRBResult:
    """Reference and interleaved curves; ``ratio = lambda_int / lambda_ref`` estimates the
    depolarizing parameter of the target's own error."""
    group = build_clifford_group_1q()
    ref = rb_experiment(lengths, n_sequences, error_channel, spam, seed, group=group)
    inter = rb_experiment(lengths, n_sequences, error_channel, spam, seed + 1, target, target_error, group)
    fr = fit_rb_decay(ref.lengths, ref.mean)
    fi = fit_rb_decay(inter.lengths, inter.mean)
    return IRBResult(fr, fi, fi.decay / fr.decay)
