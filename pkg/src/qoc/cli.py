"""Config-driven command-line front end writing CSV artifacts.

Subcommands: ``optimize``, ``qsl-sweep``, ``rb``, ``drag``, ``classical-sho``.
Exit codes are 0 on success, 1 on engine failure and 2 on configuration
errors. Floats are written with 17 significant digits.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np

from .benchmarking import SpamModel, depolarizing_channel, fit_rb_decay, interleaved_rb, rb_experiment
from .classical import integrate_adjoint, integrate_forward, pmp_optimize, sho_problem
from .drag import (
    ThreeLevelSystem,
    calibrate_prefactors,
    first_order_drag,
    gaussian_pulse,
    simulate_3level_gate,
)
from .errors import ConfigError, QocError
from .goat import GoatProblem, crab_optimize, goat_optimize, random_fourier_pulse
from .grape import grape_optimize
from .linalg import IDENTITY2, SIGMA_X, SIGMA_Y, SIGMA_Z, basis_state
from .objectives import GATE_FIDELITY, PROJECTIVE_SU, STATE_OVERLAP, Objective, Penalty
from .system import AnalyticPulse, BoundingTransform, ControlSystem, PiecewisePulse, bandwidth_penalty

SCHEMA = {
    "system": {"dim": 2, "drift": [], "controls": ["pauli_x"], "amplitude_limits": None},
    "pulse": {
        "kind": "pwc",
        "n_slices": 20,
        "duration": 2.0,
        "init": "random",
        "amplitude": 0.5,
        "n_terms": 1,
        "window": "none",
        "params": None,
        "param_bounds": None,
    },
    "objective": {"kind": "gate_fidelity", "target": "x", "initial_state": 0, "bandwidth_weight": 0.0},
    "optimizer": {
        "method": "grape",
        "scheme": "concurrent",
        "block": 1,
        "algorithm": "lbfgs",
        "max_iter": 500,
        "fidelity_target": None,
        "gtol": 1e-10,
        "seed": 0,
        "restarts": 3,
    },
    "sweep": {"t_min": 1.0, "t_max": 2.0, "steps": 21},
    "output": {"directory": None},
}

INT_KEYS = {"dim", "n_slices", "n_terms", "block", "max_iter", "seed", "restarts", "steps"}
FLOAT_KEYS = {"duration", "amplitude", "bandwidth_weight", "fidelity_target", "gtol", "t_min", "t_max"}

HADAMARD = (SIGMA_X + SIGMA_Z) / np.sqrt(2)
NAMED_GATES = {"x": SIGMA_X, "y": SIGMA_Y, "z": SIGMA_Z, "h": HADAMARD, "identity": IDENTITY2}
OBJECTIVE_KINDS = {"gate_fidelity": GATE_FIDELITY, "projective_su": PROJECTIVE_SU, "state_overlap": STATE_OVERLAP}


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, (str, int, np.integer)) else _fmt(v) for v in row])


# ---- configuration --------------------------------------------------------------------------


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw.strip()


def load_config(path) -> dict:
    """Read an INI config into nested dicts; values are JSON where they parse as JSON.

    Unknown sections and keys raise :class:`ConfigError` naming the key.
    """
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    cfg = {sec: dict(keys) for sec, keys in SCHEMA.items()}
    for sec in parser.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
        for key, raw in parser.items(sec):
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key '{key}' in section [{sec}]")
            cfg[sec][key] = _check_type(key, _parse_value(raw))
    return cfg


def _check_type(key: str, value):
    numeric = isinstance(value, (int, float)) and not isinstance(value, bool)
    if key in INT_KEYS and not (isinstance(value, int) and not isinstance(value, bool)):
        raise ConfigError(f"'{key}' must be an integer, got {value!r}")
    if key in FLOAT_KEYS and not (numeric or (key == "fidelity_target" and value is None)):
        raise ConfigError(f"'{key}' must be a number, got {value!r}")
    return value


def _complex_matrix(rows, key: str) -> np.ndarray:
    try:
        m = np.array([[complex(*e) if isinstance(e, list) else complex(e) for e in row] for row in rows])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"'{key}': matrix entries must be numbers or [re, im] pairs") from exc
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ConfigError(f"'{key}': matrix must be square")
    return m


def _named_operator(name: str, dim: int, key: str) -> np.ndarray:
    if name.startswith("pauli_"):
        p = {"pauli_x": SIGMA_X, "pauli_y": SIGMA_Y, "pauli_z": SIGMA_Z}.get(name)
        if p is None:
            raise ConfigError(f"'{key}': unknown operator '{name}'")
        m = np.zeros((dim, dim), dtype=complex)
        m[:2, :2] = p
        return m
    a = np.diag(np.sqrt(np.arange(1, dim)), 1).astype(complex)
    ops = {"ladder_x": a + a.T, "ladder_y": -1j * (a - a.T), "number": a.T @ a}
    if name not in ops:
        raise ConfigError(f"'{key}': unknown operator '{name}'")
    return ops[name]


def _operator(spec, dim: int, key: str) -> np.ndarray:
    """A named operator, ``[name, coefficient]`` or a dense row list."""
    if isinstance(spec, str):
        m = _named_operator(spec, dim, key)
    elif isinstance(spec, list) and len(spec) == 2 and isinstance(spec[0], str):
        m = float(spec[1]) * _named_operator(spec[0], dim, key)
    elif isinstance(spec, list):
        m = _complex_matrix(spec, key)
    else:
        raise ConfigError(f"'{key}': cannot interpret operator {spec!r}")
    if m.shape != (dim, dim):
        raise ConfigError(f"'{key}': operator shape {m.shape} does not match dim {dim}")
    return m


def build_system(cfg: dict) -> ControlSystem:
    s = cfg["system"]
    dim = int(s["dim"])
    if dim < 2:
        raise ConfigError("'dim' must be at least 2")
    drift = np.zeros((dim, dim), dtype=complex)
    for term in s["drift"]:
        drift = drift + _operator(term, dim, "drift")
    if not s["controls"]:
        raise ConfigError("'controls' must list at least one operator")
    controls = [_operator(c, dim, "controls") for c in s["controls"]]
    limits = s["amplitude_limits"]
    if limits is not None:
        if len(limits) != len(controls):
            raise ConfigError("'amplitude_limits' needs one entry per control")
        limits = [None if lim is None else tuple(map(float, lim)) for lim in limits]
    return ControlSystem(drift, controls, amplitude_limits=limits)


def build_objective(cfg: dict, dim: int) -> Objective:
    o = cfg["objective"]
    if o["kind"] not in OBJECTIVE_KINDS:
        raise ConfigError(f"'kind': unknown objective '{o['kind']}'")
    kind = OBJECTIVE_KINDS[o["kind"]]
    penalties = []
    if float(o["bandwidth_weight"]) > 0:
        penalties.append(Penalty(bandwidth_penalty, float(o["bandwidth_weight"]), "bandwidth"))
    target = o["target"]
    if kind == STATE_OVERLAP:
        psi1 = basis_state(dim, int(target)) if isinstance(target, int) else np.asarray(target, dtype=complex)
        return Objective(kind, psi1, basis_state(dim, int(o["initial_state"])), penalties)
    if isinstance(target, str):
        if target not in NAMED_GATES:
            raise ConfigError(f"'target': unknown gate '{target}'")
        u = np.eye(dim, dtype=complex)
        u[:2, :2] = NAMED_GATES[target]
    else:
        u = _complex_matrix(target, "target")
    return Objective(kind, u, None, penalties)


def initial_pulse(cfg: dict, system: ControlSystem, duration: float, rng: np.random.Generator):
    p = cfg["pulse"]
    n_c = system.n_controls
    amp = float(p["amplitude"])
    if p["kind"] == "pwc":
        n = int(p["n_slices"])
        if p["init"] == "constant":
            values = np.full((n, n_c), amp)
        elif p["init"] == "random":
            values = amp * rng.uniform(-1, 1, (n, n_c))
        else:
            raise ConfigError(f"'init': unknown initialization '{p['init']}'")
        return PiecewisePulse(system.clip(values), duration / n)
    if p["kind"] not in ("fourier", "gaussian"):
        raise ConfigError(f"'kind': unknown pulse kind '{p['kind']}'")
    if p["params"] is not None:
        return AnalyticPulse(p["kind"], p["params"], duration, p["window"])
    if p["kind"] == "gaussian":
        raise ConfigError("'params' is required for gaussian pulses")
    return random_fourier_pulse(n_c, int(p["n_terms"]), duration, rng, amp, p["window"])


def _param_bounds(cfg: dict, n_params: int):
    b = cfg["pulse"]["param_bounds"]
    if b is None:
        return None
    if len(b) != n_params:
        raise ConfigError(f"'param_bounds' needs {n_params} entries")
    return [None if x is None else BoundingTransform(float(x[0]), float(x[1])) for x in b]


def run_optimization(cfg: dict, system, objective, pulse):
    """Dispatch to the configured optimizer; returns an :class:`OptimizationRun`."""
    opt = cfg["optimizer"]
    method = opt["method"]
    target = opt["fidelity_target"]
    if method == "grape":
        if not isinstance(pulse, PiecewisePulse):
            raise ConfigError("'method': grape needs a pwc pulse")
        return grape_optimize(system, pulse, objective, opt["scheme"], int(opt["block"]), opt["algorithm"],
                              int(opt["max_iter"]), target, float(opt["gtol"]))
    if method in ("goat", "crab"):
        if not isinstance(pulse, AnalyticPulse):
            raise ConfigError(f"'method': {method} needs an analytic pulse")
        prob = GoatProblem(system, pulse, objective, _param_bounds(cfg, pulse.n_params))
        inf_target = 0.0 if target is None else 1.0 - target
        if method == "goat":
            return goat_optimize(prob, max_iter=int(opt["max_iter"]), infidelity_target=inf_target, gtol=float(opt["gtol"]))
        return crab_optimize(prob, max_iter=int(opt["max_iter"]), infidelity_target=inf_target)
    raise ConfigError(f"'method': unknown optimizer '{method}'")


def _clamp_bounds(cfg: dict, pulse):
    """Pull analytic parameters strictly inside their bounds so the sine map is invertible."""
    bounds = _param_bounds(cfg, pulse.n_params) if isinstance(pulse, AnalyticPulse) else None
    if bounds is None:
        return pulse
    flat = pulse.flat
    for m, bt in enumerate(bounds):
        if bt is not None:
            margin = 1e-3 * (bt.v_max - bt.v_min)
            flat[m] = np.clip(flat[m], bt.v_min + margin, bt.v_max - margin)
    return pulse.with_flat(flat)


# ---- commands -------------------------------------------------------------------------------


def _sample_pulse(pulse, n: int):
    if isinstance(pulse, PiecewisePulse):
        return pulse.midpoints, pulse.values
    t = (np.arange(n) + 0.5) * pulse.horizon / n
    return t, pulse.values(t)


def cmd_optimize(cfg: dict, out: Path, seed: int, timing: bool = False) -> int:
    system = build_system(cfg)
    objective = build_objective(cfg, system.dim)
    rng = np.random.default_rng(seed)
    pulse = _clamp_bounds(cfg, initial_pulse(cfg, system, float(cfg["pulse"]["duration"]), rng))
    run = run_optimization(cfg, system, objective, pulse)
    wall = run.wall_ms if timing else [0.0] * len(run.values)
    _write_csv(out / "trace.csv", ["iter", "J", "grad_norm", "wall_ms"],
               [(k, 1.0 - v, g, w) for k, (v, g, w) in enumerate(zip(run.values, run.grad_norms, wall))])
    t, u = _sample_pulse(run.pulse, int(cfg["pulse"]["n_slices"]))
    _write_csv(out / "pulse_final.csv", ["t"] + [f"u_{i + 1}" for i in range(u.shape[1])],
               [(ti, *ui) for ti, ui in zip(t, u)])
    print(f"method={run.method} iterations={run.n_iter} J={_fmt(1.0 - run.final_value)} "
          f"fidelity={_fmt(run.final_fidelity)} message={run.message}")
    return 0


def _rescale(pulse, duration: float):
    if isinstance(pulse, PiecewisePulse):
        return pulse.resampled(pulse.n_slices, duration)
    return pulse.rescaled(duration)


def qsl_sweep(cfg: dict, times, seed: int, restarts: int | None = None, threads: int = 1) -> list:
    """Best infidelity per duration from a warm start plus seeded random restarts.

    Returns rows ``(T, best_infidelity, iterations)`` where ``iterations``
    belongs to the best run. Restarts of one duration run in a worker pool;
    results are collected in submission order.
    """
    system = build_system(cfg)
    objective = build_objective(cfg, system.dim)
    restarts = int(cfg["optimizer"]["restarts"]) if restarts is None else restarts
    rows, warm = [], None
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        for i, duration in enumerate(times):
            starts = [] if warm is None else [_rescale(warm, duration)]
            for r in range(restarts):
                rng = np.random.default_rng([seed, i, r])
                starts.append(initial_pulse(cfg, system, duration, rng))
            starts = [_clamp_bounds(cfg, p) for p in starts]
            runs = list(pool.map(lambda p: run_optimization(cfg, system, objective, p), starts))
            best = min(runs, key=lambda run: run.final_infidelity)
            warm = best.pulse
            rows.append((float(duration), max(best.final_infidelity, 0.0), best.n_iter))
    return rows


def cmd_qsl_sweep(cfg: dict, out: Path, seed: int, threads: int, t_min=None, t_max=None, steps=None) -> int:
    sw = cfg["sweep"]
    t_min = float(sw["t_min"] if t_min is None else t_min)
    t_max = float(sw["t_max"] if t_max is None else t_max)
    steps = int(sw["steps"] if steps is None else steps)
    if steps < 1 or (steps > 1 and not t_min < t_max):
        raise ConfigError("'t_min' must be below 't_max' and 'steps' positive")
    times = np.linspace(t_min, t_max, steps) if steps > 1 else np.array([t_min])
    rows = qsl_sweep(cfg, times, seed, threads=threads)
    _write_csv(out / "qsl.csv", ["T", "best_infidelity", "iterations"], rows)
    for t, inf, it in rows:
        print(f"T={t:.4f} infidelity={inf:.3e} iterations={it}")
    return 0


def cmd_rb(args, out: Path, seed: int) -> int:
    lengths = [int(n) for n in args.lengths.split(",")]
    channel = depolarizing_channel(2, args.p)
    spam = SpamModel(args.prep_fidelity, args.meas_fidelity)
    if args.interleave is None:
        curve = rb_experiment(lengths, args.K, channel, spam, seed)
        curve.to_csv(out / "rb.csv")
        fits = [("reference", fit_rb_decay(curve.lengths, curve.mean))]
    else:
        target_error = depolarizing_channel(2, args.q)
        res = interleaved_rb(args.interleave, lengths, args.K, channel, target_error, spam, seed)
        ref = rb_experiment(lengths, args.K, channel, spam, seed)
        inter = rb_experiment(lengths, args.K, channel, spam, seed + 1, args.interleave, target_error)
        ref.to_csv(out / "rb.csv")
        inter.to_csv(out / "rb_interleaved.csv")
        fits = [("reference", res.reference), ("interleaved", res.interleaved)]
        print(f"interleaved ratio={_fmt(res.ratio)} gate_fidelity={_fmt(res.gate_fidelity)}")
    _write_csv(out / "rb_fit.csv", ["curve", "p0", "A", "lambda"],
               [(name, f.p0, f.amplitude, f.decay) for name, f in fits])
    for name, f in fits:
        print(f"{name}: p0={_fmt(f.p0)} A={_fmt(f.amplitude)} lambda={_fmt(f.decay)}")
    return 0


def cmd_drag(args, out: Path, seed: int) -> int:
    sys3 = ThreeLevelSystem(anharmonicity=args.anharmonicity, lambda_leak=args.lambda_leak)
    unit = np.pi / abs(args.anharmonicity)
    if args.tg_sweep is not None:
        lo, hi, n = args.tg_sweep
        gate_times = np.linspace(lo, hi, int(n)) * unit
    else:
        gate_times = [args.tg * unit]
    rows = []
    for tg in gate_times:
        pulse = gaussian_pulse(tg, args.n_slices)
        if args.order == "first":
            pulse = first_order_drag(pulse, sys3.anharmonicity, sys3.lambda_leak)
        inf, leak = simulate_3level_gate(sys3, pulse)
        rows.append((tg, args.order, inf, leak))
        print(f"tg={tg:.6f} order={args.order} infidelity={inf:.3e} leakage={leak:.3e}")
        if args.calibrate:
            cal = calibrate_prefactors(sys3, pulse, args.sigma_meas, seed)
            inf_c, leak_c = simulate_3level_gate(sys3, cal.pulse)
            rows.append((tg, f"{args.order}+calibrated", inf_c, leak_c))
            print(f"calibrated alpha={np.array2string(cal.alpha, precision=4)} infidelity={inf_c:.3e}")
            if len(gate_times) == 1:
                cal.to_csv(out / "calibration.csv")
        if len(gate_times) == 1:
            pulse.to_csv(out / "drag_pulse.csv")
    _write_csv(out / "drag.csv", ["tg", "variant", "infidelity", "leakage"], rows)
    return 0


def cmd_classical_sho(args, out: Path) -> int:
    prob = sho_problem(args.omega, args.a, args.T, args.N)
    u0 = np.full(args.N, args.omega**2 * args.a)
    res = pmp_optimize(prob, u0, max_iter=args.max_iter)
    grads = res.grad_norm_trace + [np.nan] * (len(res.cost_trace) - len(res.grad_norm_trace))
    _write_csv(out / "sho_trace.csv", ["iter", "J", "grad_norm"],
               [(k, j, g) for k, (j, g) in enumerate(zip(res.cost_trace, grads))])
    x = integrate_forward(prob, res.controls)
    lam = integrate_adjoint(prob, x, res.controls)
    t = prob.times[:-1]
    _write_csv(out / "controls.csv", ["t", "u", "x", "v", "lambda_1", "lambda_2"],
               [(ti, ui, *xi, *li) for ti, ui, xi, li in zip(t, res.controls[:, 0], x[:-1], lam.values[:-1])])
    xt = x[-1]
    print(f"iterations={res.n_iter} J={_fmt(res.cost_trace[-1])} x(T)-a={xt[0] - args.a:.3e} v(T)={xt[1]:.3e}")
    return 0


# ---- entry point ----------------------------------------------------------------------------


def _threads(value: int | None) -> int:
    if value is not None:
        return value
    env = os.environ.get("QOC_THREADS")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        raise ConfigError(f"QOC_THREADS must be an integer, got {env!r}") from None


def bundled_config(name: str = "qubit_pi.cfg") -> Path:
    return Path(str(resources.files("qoc") / "configs" / name))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", type=Path, default=None, help="output directory")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--threads", type=int, default=None, help="worker threads (default: $QOC_THREADS or 1)")

    parser = argparse.ArgumentParser(prog="qoc", description="Quantum optimal control toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("optimize", parents=[common], help="optimize a pulse from a config file")
    p.add_argument("--config", type=Path, default=None, help="INI config (default: bundled qubit_pi.cfg)")
    p.add_argument("--timing", action="store_true", help="record wall-clock times in trace.csv")

    p = sub.add_parser("qsl-sweep", parents=[common], help="best infidelity versus gate duration")
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--t-min", type=float, default=None)
    p.add_argument("--t-max", type=float, default=None)
    p.add_argument("--steps", type=int, default=None)

    p = sub.add_parser("rb", parents=[common], help="simulated (interleaved) randomized benchmarking")
    p.add_argument("--p", type=float, default=0.99, help="depolarizing parameter of every Clifford")
    p.add_argument("--lengths", default="1,2,4,8,16,32,64,128,256")
    p.add_argument("--K", type=int, default=200, help="sequences per length")
    p.add_argument("--interleave", type=int, default=None, help="Clifford index to interleave")
    p.add_argument("--q", type=float, default=1.0, help="depolarizing parameter of the interleaved gate")
    p.add_argument("--prep-fidelity", type=float, default=1.0)
    p.add_argument("--meas-fidelity", type=float, default=1.0)

    p = sub.add_parser("drag", parents=[common], help="three-level Gaussian and DRAG gate simulation")
    p.add_argument("--tg", type=float, default=4.0, help="gate time in units of pi/|anharmonicity|")
    p.add_argument("--tg-sweep", type=float, nargs=3, metavar=("MIN", "MAX", "N"), default=None)
    p.add_argument("--order", choices=("none", "first"), default="first")
    p.add_argument("--lambda-leak", type=float, default=float(np.sqrt(2)))
    p.add_argument("--anharmonicity", type=float, default=-1.0)
    p.add_argument("--n-slices", type=int, default=400)
    p.add_argument("--calibrate", action="store_true", help="also run the prefactor calibration")
    p.add_argument("--sigma-meas", type=float, default=0.0)

    p = sub.add_parser("classical-sho", parents=[common], help="driven oscillator adjoint optimization")
    p.add_argument("--omega", type=float, default=1.0)
    p.add_argument("--a", type=float, default=1.0)
    p.add_argument("--T", type=float, default=3 * np.pi)
    p.add_argument("--N", type=int, default=400)
    p.add_argument("--max-iter", type=int, default=2000)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        threads = _threads(args.threads)
        cfg = None
        if args.command in ("optimize", "qsl-sweep"):
            cfg = load_config(args.config or bundled_config())
        out = args.out
        if out is None:
            out = Path(cfg["output"]["directory"]) if cfg and cfg["output"]["directory"] else Path(".")
        out.mkdir(parents=True, exist_ok=True)
        seed = args.seed
        if seed is None:
            seed = int(cfg["optimizer"]["seed"]) if cfg else 0
        if args.command == "optimize":
            return cmd_optimize(cfg, out, seed, args.timing)
        if args.command == "qsl-sweep":
            return cmd_qsl_sweep(cfg, out, seed, threads, args.t_min, args.t_max, args.steps)
        if args.command == "rb":
            return cmd_rb(args, out, seed)
        if args.command == "drag":
            return cmd_drag(args, out, seed)
        return cmd_classical_sho(args, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (QocError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

