"""Command line driver: declarative TOML configs in, CSV and certificate
reports out.

Subcommands
    simulate     integrate one system and write the trajectory
    certify      run the stability certificate bundle
    dichotomy    projected-kernel boundedness and decay analysis
    equivalence  bounded-solution correspondence under a perturbation
    sweep        scalar (a,b) stability-region grid

Exit codes: 0 success / all certificates pass, 1 solver failure, 2 config
error, 3 failing certificate or no contraction, 4 inconclusive-only.

Config grammar (TOML):
    [system]   dimension, A, B, g, f, eta
    [mesh]     family + parameters, or explicit knots/anchors
    [solver]   tol, quad_tol, max_iter, method, horizon
    [task]     tau, xi, t_end, t0, P, a, b, nu_plus, nu_minus,
               grid_n, a_range, b_range

Matrix fields take a scalar, a nested array, or a preset name; g takes an
array or a preset name; f and eta take {preset, amplitude} tables.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:                      # Python < 3.11
    import tomli as tomllib

from . import certificates as cert
from .coefficients import (CoefficientFunction, constant, eta_preset,
                           forcing_preset, matrix_preset, perturbation_preset)
from .errors import (ConfigError, DepcagError, DomainError, MeshError,
                     NoContraction)
from .green import GreenKernel, spectral_projection
from .linear_flow import check_h4
from .mesh import Mesh
from .solvers import (DepcagSystem, bounded_solution_dichotomy,
                      equivalence_map, oracle_integrate, solve_linear,
                      solve_linear_wiener, solve_quasilinear,
                      trajectory_residual)

EXIT_OK = 0
EXIT_SOLVER = 1
EXIT_CONFIG = 2
EXIT_CERT_FAIL = 3
EXIT_INCONCLUSIVE = 4

log = logging.getLogger("depcag")

_BLOCK_KEYS = {
    "system": {"dimension", "A", "B", "g", "f", "eta"},
    "mesh": {"family", "nu_plus", "nu_minus", "t0", "n_intervals",
             "i_min", "i_max", "c", "d", "knots", "anchors"},
    "solver": {"tol", "quad_tol", "max_iter", "method", "horizon"},
    "task": {"tau", "xi", "t_end", "t0", "P", "a", "b", "nu_plus",
             "nu_minus", "grid_n", "a_range", "b_range", "sigma_min",
             "certificates"},
}


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def _write_csv(path, header, rows) -> None:
    # RFC-4180 style; plain numeric fields never need quoting
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\r\n")
        for row in rows:
            fh.write(",".join(_fmt(v) if isinstance(v, float) else str(v)
                              for v in row) + "\r\n")


def load_config(path) -> dict:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error: {exc}") from None
    unknown_blocks = set(data) - set(_BLOCK_KEYS)
    if unknown_blocks:
        raise ConfigError(f"unknown config blocks: {sorted(unknown_blocks)}")
    for block, allowed in _BLOCK_KEYS.items():
        extra = set(data.get(block, {})) - allowed
        if extra:
            raise ConfigError(f"unknown keys in [{block}]: {sorted(extra)}")
    return data


# -- builders ---------------------------------------------------------------

def _build_matrix(value, dim: int, what: str) -> CoefficientFunction:
    if value is None:
        raise ConfigError(f"[system] {what} is required")
    if isinstance(value, str):
        coeff = matrix_preset(value)
        if coeff.dimension != dim:
            raise ConfigError(f"{what} preset '{value}' has dimension "
                              f"{coeff.dimension}, config says {dim}")
        return coeff
    M = np.atleast_2d(np.asarray(value, dtype=float))
    if M.shape == (1, 1) and dim > 1:
        M = float(M[0, 0]) * np.eye(dim)
    if M.shape != (dim, dim):
        raise ConfigError(f"{what} has shape {M.shape}, expected ({dim}, {dim})")
    return constant(M, name=what)


def _build_forcing(value, dim: int):
    if value is None:
        return None
    if isinstance(value, str):
        return forcing_preset(value, dim)
    v = np.asarray(value, dtype=float).ravel()
    if v.size != dim:
        raise ConfigError(f"g has length {v.size}, expected {dim}")
    return lambda t, v=v: v


def _build_perturbation(value):
    if value is None:
        return None, None
    if not isinstance(value, dict) or "preset" not in value:
        raise ConfigError("f must be a table with keys preset, amplitude")
    amp = float(value.get("amplitude", 1.0))
    return perturbation_preset(value["preset"], amp), amp


def _build_eta(value, f_amplitude):
    if value is None:
        if f_amplitude is None:
            return None
        return eta_preset("constant", f_amplitude)
    if isinstance(value, (int, float)):
        return eta_preset("constant", float(value))
    if not isinstance(value, dict) or "preset" not in value:
        raise ConfigError("eta must be a number or a table with preset, amplitude")
    return eta_preset(value["preset"], float(value.get("amplitude", 1.0)))


def _build_mesh(block: dict) -> Mesh:
    try:
        return _build_mesh_inner(block)
    except MeshError as exc:
        # a bad mesh is a config defect, not a solver failure
        raise ConfigError(str(exc)) from None


def _build_mesh_inner(block: dict) -> Mesh:
    family = block.get("family", "uniform")
    if family == "explicit":
        if "knots" not in block or "anchors" not in block:
            raise ConfigError("explicit mesh needs knots and anchors arrays")
        return Mesh.from_arrays(block["knots"], block["anchors"],
                                int(block.get("i_min", 0)))
    if family == "uniform":
        return Mesh.uniform(float(block.get("nu_plus", 0.5)),
                            float(block.get("nu_minus", 0.5)),
                            float(block.get("t0", 0.0)),
                            int(block.get("n_intervals", 20)),
                            int(block.get("i_min", 0)))
    if family == "greatest_integer":
        return Mesh.greatest_integer(int(block.get("i_min", 0)),
                                     int(block.get("i_max", 20)))
    if family == "cooke_wiener":
        return Mesh.cooke_wiener(int(block.get("i_min", 0)),
                                 int(block.get("i_max", 20)))
    if family == "affine":
        if "c" not in block:
            raise ConfigError("affine mesh needs c (and optional d)")
        return Mesh.affine(float(block["c"]), float(block.get("d", 0.0)),
                           int(block.get("i_min", 0)), int(block.get("i_max", 20)))
    raise ConfigError(f"unknown mesh family '{family}'")


def build_system(config: dict) -> DepcagSystem:
    sysblock = config.get("system", {})
    if "dimension" not in sysblock:
        raise ConfigError("[system] dimension is required")
    dim = int(sysblock["dimension"])
    if dim < 1:
        raise ConfigError(f"dimension must be >= 1, got {dim}")
    A = _build_matrix(sysblock.get("A"), dim, "A")
    B = _build_matrix(sysblock.get("B"), dim, "B")
    mesh = _build_mesh(config.get("mesh", {}))
    g = _build_forcing(sysblock.get("g"), dim)
    f, amp = _build_perturbation(sysblock.get("f"))
    eta = _build_eta(sysblock.get("eta"), amp)
    try:
        return DepcagSystem(A, B, mesh, g=g, f=f, eta=eta)
    except (ValueError, DepcagError) as exc:
        raise ConfigError(str(exc)) from None


def _build_projection(task: dict, system: DepcagSystem) -> np.ndarray:
    value = task.get("P", "spectral")
    if isinstance(value, str):
        if value != "spectral":
            raise ConfigError(f"unknown projection value '{value}'")
        if not (system.A.is_constant and system.B.is_constant
                and system.mesh.family == "uniform"):
            raise ConfigError(
                "default spectral projection needs constant A, B on a uniform "
                "mesh; supply an explicit P matrix in [task]")
        return spectral_projection(system.cauchy().monodromy_factors()[0])
    P = np.atleast_2d(np.asarray(value, dtype=float))
    if P.shape != (system.dimension,) * 2:
        raise ConfigError(f"P has shape {P.shape}, expected square of "
                          f"dimension {system.dimension}")
    return P


def _scalar_nus(task: dict, mesh: Mesh) -> tuple[float, float]:
    if "nu_plus" in task or "nu_minus" in task:
        return float(task.get("nu_plus", 0.0)), float(task.get("nu_minus", 0.0))
    return (float(mesh.anchors[0] - mesh.knots[0]),
            float(mesh.knots[1] - mesh.anchors[0]))


# -- subcommands ------------------------------------------------------------

def cmd_simulate(config: dict, out: str, tol: float, seed: int) -> int:
    system = build_system(config)
    task = config.get("task", {})
    solver = config.get("solver", {})
    mesh = system.mesh
    tau = float(task.get("tau", mesh.t_min))
    t_end = float(task.get("t_end", mesh.t_max))
    xi = np.asarray(task.get("xi", np.ones(system.dimension)), dtype=float).ravel()
    if xi.size != system.dimension:
        raise ConfigError(f"xi has length {xi.size}, expected {system.dimension}")
    method = solver.get("method", "vop")
    quad_tol = float(solver.get("quad_tol", tol))
    if method == "vop":
        traj = solve_linear(system, tau, xi, t_end, quad_tol=quad_tol)
    elif method == "wiener":
        traj = solve_linear_wiener(system, tau, xi, t_end, quad_tol=quad_tol)
    elif method == "oracle":
        traj = oracle_integrate(system, tau, xi, t_end, tol=quad_tol)
    elif method == "quasilinear":
        traj = solve_quasilinear(system, tau, xi, t_end,
                                 max_iter=int(solver.get("max_iter", 200)),
                                 tol=float(solver.get("tol", 1e-10)),
                                 quad_tol=quad_tol)
    else:
        raise ConfigError(f"unknown method '{method}'; "
                          "use vop | wiener | oracle | quasilinear")
    path = os.path.join(out, "trajectory.csv")
    traj.to_csv(path)
    resid = trajectory_residual(system, traj)
    print(f"simulate: method={method} tau={_fmt(tau)} t_end={_fmt(t_end)}")
    print(f"simulate: samples={traj.times.size} sup_norm={_fmt(traj.sup_norm)}")
    print(f"simulate: residual={resid:.3e} csv={path}")
    return EXIT_OK


def _bundle_exit(certs) -> int:
    verdicts = [c.verdict for c in certs]
    if cert.FAIL in verdicts:
        return EXIT_CERT_FAIL
    if verdicts and all(v == cert.INCONCLUSIVE for v in verdicts):
        return EXIT_INCONCLUSIVE
    return EXIT_OK


_ALL_CERTIFICATES = ("h2", "h4", "s_conditions", "discrete_stability",
                     "perturbed_decay", "scalar_example")


def cmd_certify(config: dict, out: str, tol: float, seed: int) -> int:
    system = build_system(config)
    task = config.get("task", {})
    requested = task.get("certificates", list(_ALL_CERTIFICATES))
    unknown = set(requested) - set(_ALL_CERTIFICATES)
    if unknown:
        raise ConfigError(f"unknown certificates: {sorted(unknown)}; "
                          f"known: {list(_ALL_CERTIFICATES)}")
    cauchy = system.cauchy()
    bundle = []
    if "h2" in requested:
        bundle.append(cert.check_h2(system))
    if "h4" in requested:
        bundle.append(check_h4(system.flow(), system.B, system.mesh))
    if "s_conditions" in requested:
        bundle.append(cert.check_s_conditions(system, cauchy))
    if "discrete_stability" in requested:
        bundle.append(cert.check_exponential_stability_discrete(cauchy))
    if "perturbed_decay" in requested and system.eta is not None:
        try:
            c, sigma, resid = cauchy.estimate_decay(
                system.mesh.t_min, system.mesh.t_max - system.mesh.t_min)
            rho_a = float(cert.check_h2(system).computed["rho_A"])
            linear = cert.Certificate(
                "linear_decay", {"window": system.mesh.t_max - system.mesh.t_min},
                {"c": c, "sigma": sigma, "rho_A": rho_a, "fit_residual": resid},
                cert.PASS if sigma > 0 else cert.FAIL,
                ["least-squares fit over the mesh window"])
            bundle.append(linear)
            bundle.append(cert.sigma0_perturbed(linear, system.eta, system.mesh))
        except DepcagError as exc:
            print(f"certify: skipping perturbed-decay certificate: {exc}")
    if "scalar_example" in requested and "a" in task and "b" in task:
        nu_plus, nu_minus = _scalar_nus(task, system.mesh)
        bundle.append(cert.scalar_example_certificate(
            float(task["a"]), float(task["b"]), nu_plus, nu_minus))
    for c in bundle:
        print(c.report())
        print()
    code = _bundle_exit(bundle)
    print(f"certify: {sum(c.passed for c in bundle)}/{len(bundle)} passed, "
          f"exit={code}")
    return code


def cmd_dichotomy(config: dict, out: str, tol: float, seed: int) -> int:
    system = build_system(config)
    task = config.get("task", {})
    cauchy = system.cauchy()
    P = _build_projection(task, system)
    bundle = [
        cert.check_ordinary_dichotomy(cauchy, P, seed=seed),
        cert.check_exponential_dichotomy(
            cauchy, P, sigma_min=float(task.get("sigma_min", 0.05)), seed=seed),
    ]
    kernel = GreenKernel(cauchy, projection=P)
    mesh = system.mesh
    ts = np.linspace(mesh.t_min, mesh.t_max, 41)
    rows = [(float(t), float(s), float(np.linalg.norm(kernel.zp(float(t), float(s)), 2)))
            for t in ts for s in ts]
    path = os.path.join(out, "zp_samples.csv")
    _write_csv(path, ["t", "s", "norm"], rows)
    print("dichotomy: P =")
    print(np.array2string(P, precision=6))
    for c in bundle:
        print(c.report())
        print()
    exp = bundle[1]
    print(f"dichotomy: c={exp.computed.get('c')} sigma={exp.computed.get('sigma')} "
          f"csv={path}")
    if any(c.verdict == cert.FAIL for c in bundle):
        print("dichotomy: at least one certificate failed; the projected "
              "kernel is not uniformly bounded or does not decay at the "
              "requested rate for this P")
        return EXIT_CERT_FAIL
    return _bundle_exit(bundle)


def cmd_equivalence(config: dict, out: str, tol: float, seed: int) -> int:
    system = build_system(config)
    if system.f is None or system.eta is None:
        raise ConfigError("[system] f and eta are required for equivalence")
    task = config.get("task", {})
    solver = config.get("solver", {})
    sys_lin = DepcagSystem(system.A, system.B, system.mesh, g=system.g)
    P = _build_projection(task, system)
    kernel = GreenKernel(sys_lin.cauchy(), projection=P)
    y = bounded_solution_dichotomy(sys_lin, kernel, tol=tol)
    t0 = float(task.get("t0", float(y.times[0])))
    try:
        v = equivalence_map(sys_lin, system, y, kernel, t0,
                            max_iter=int(solver.get("max_iter", 30)),
                            tol=float(solver.get("tol", 1e-10)),
                            quad_tol=float(solver.get("quad_tol", 1e-10)))
    except NoContraction as exc:
        print(f"equivalence: no contraction: {exc}")
        return EXIT_CERT_FAIL
    rows = []
    for t in y.times:
        yt, vt = y(float(t)), v(float(t))
        rows.append((float(t), *map(float, yt), *map(float, vt),
                     float(np.linalg.norm(yt - vt))))
    p = system.dimension
    header = (["t"] + [f"y_{i+1}" for i in range(p)]
              + [f"v_{i+1}" for i in range(p)] + ["gap"])
    path = os.path.join(out, "equivalence.csv")
    _write_csv(path, header, rows)
    gaps = np.array([r[-1] for r in rows])
    print(f"equivalence: beta={v.meta['beta']:.6g} "
          f"iterations={v.meta['iterations']} ctilde={v.meta['ctilde']:.6g}")
    print(f"equivalence: gap start={gaps[0]:.3e} end={gaps[-1]:.3e} "
          f"max={gaps.max():.3e} csv={path}")
    return EXIT_OK


def cmd_sweep(config: dict, out: str, tol: float, seed: int) -> int:
    task = config.get("task", {})
    n = int(task.get("grid_n", 41))
    a_lo, a_hi = map(float, task.get("a_range", (-3.0, 3.0)))
    b_lo, b_hi = map(float, task.get("b_range", (-3.0, 3.0)))
    nu_plus = float(task.get("nu_plus", 1.0))
    nu_minus = float(task.get("nu_minus", 1.0))
    rows = []
    n_pass = n_mismatch = 0
    for a in np.linspace(a_lo, a_hi, n):
        for b in np.linspace(b_lo, b_hi, n):
            a, b = float(a), float(b)
            try:
                c = cert.scalar_example_certificate(a, b, nu_plus, nu_minus)
            except DomainError:
                rows.append((a, b, "out_of_domain", "", ""))
                continue
            ineq = c.computed["inequality_holds"]
            lam1 = float(c.computed["abs_lambda1"])
            rows.append((a, b, "ok", str(bool(ineq)).lower(), lam1))
            if ineq:
                n_pass += 1
                if lam1 >= 1.0:
                    n_mismatch += 1
    path = os.path.join(out, "sweep.csv")
    _write_csv(path, ["a", "b", "status", "inequality", "abs_lambda1"], rows)
    print(f"sweep: {len(rows)} cells, {n_pass} inequality passes, "
          f"{n_mismatch} sufficiency violations, csv={path}")
    return EXIT_CERT_FAIL if n_mismatch else EXIT_OK


_COMMANDS = {
    "simulate": cmd_simulate,
    "certify": cmd_certify,
    "dichotomy": cmd_dichotomy,
    "equivalence": cmd_equivalence,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="depcag",
        description="piecewise-constant-argument system toolkit")
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True, help="TOML config path")
    parser.add_argument("--out", default=".", help="output directory for CSV")
    parser.add_argument("--tol", type=float, default=1e-10)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    level = os.environ.get("DEPCAG_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(name)s %(levelname)s %(message)s")

    try:
        config = load_config(args.config)
        os.makedirs(args.out, exist_ok=True)
        return _COMMANDS[args.command](config, args.out, args.tol, args.seed)
    except ConfigError as exc:
        print(f"error[config]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DepcagError as exc:
        print(f"error[solver]: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
