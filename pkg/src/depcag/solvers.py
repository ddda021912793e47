"""Solvers for linear and quasilinear piecewise-argument systems.

Linear systems are solved by the variation-of-parameters assembly built on
the solution operator Z and the ordinary flow Phi; quasilinear systems by
Picard iteration on the associated integral equation.  ``oracle_integrate``
is a deliberately independent cross-check: it never touches Z or the Green
kernels and instead resolves each interval's anchor value directly.

Index conventions: sums over knots follow the signed convention, so the
same assembly serves t >= tau and t < tau.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import quad, quad_vec, solve_ivp
from scipy.interpolate import CubicSpline

from . import certificates as cert
from .cauchy_operator import CauchyOperator, _inv
from .coefficients import CoefficientFunction
from .errors import (AnchorSolveFailure, MaxIterExceeded, NoContraction,
                     NoDecayCertificate, TailNotConvergent, XiNotInRange)
from .green import GreenKernel
from .linear_flow import FlowEvaluator
from .mesh import Mesh


@dataclass
class DepcagSystem:
    """Coefficients, forcing and perturbation of one system on one mesh."""

    A: CoefficientFunction
    B: CoefficientFunction
    mesh: Mesh
    g: Callable[[float], np.ndarray] | None = None
    f: Callable[[float, np.ndarray, np.ndarray], np.ndarray] | None = None
    eta: Callable[[float], float] | None = None
    _flow: FlowEvaluator | None = field(default=None, init=False, repr=False)
    _cauchy: CauchyOperator | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.A.dimension != self.B.dimension:
            raise ValueError("A and B dimensions differ")
        if self.f is not None and self.eta is None:
            raise ValueError("a perturbation f needs its Lipschitz weight eta")

    @property
    def dimension(self) -> int:
        return self.A.dimension

    def flow(self) -> FlowEvaluator:
        if self._flow is None:
            self._flow = FlowEvaluator(self.A)
        return self._flow

    def cauchy(self) -> CauchyOperator:
        if self._cauchy is None:
            self._cauchy = CauchyOperator(self.flow(), self.B, self.mesh)
        return self._cauchy

    def g_vec(self, t: float) -> np.ndarray:
        if self.g is None:
            return np.zeros(self.dimension)
        return np.asarray(self.g(t), dtype=float)

    def spot_check_lipschitz(self, n: int = 50, seed: int = 0,
                             box: float = 1.0) -> float:
        """Worst sampled ratio |f(t,x1,y1)-f(t,x2,y2)| / (eta(t)(|dx|+|dy|));
        values above 1 mean the declared weight is violated at some probe."""
        if self.f is None:
            return 0.0
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(n):
            t = rng.uniform(self.mesh.t_min, self.mesh.t_max)
            x1, x2, y1, y2 = rng.uniform(-box, box, size=(4, self.dimension))
            num = np.linalg.norm(np.asarray(self.f(t, x1, y1)) - np.asarray(self.f(t, x2, y2)))
            den = self.eta(t) * (np.linalg.norm(x1 - x2) + np.linalg.norm(y1 - y2))
            if den > 0:
                worst = max(worst, float(num / den))
        return worst


@dataclass
class Trajectory:
    """Sampled solution with dense evaluation."""

    times: np.ndarray
    states: np.ndarray                 # shape (len(times), p)
    dense: Callable[[float], np.ndarray]
    mesh: Mesh
    meta: dict = field(default_factory=dict)

    def __call__(self, t: float) -> np.ndarray:
        return self.dense(t)

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.states, axis=1)))

    def to_csv(self, path) -> None:
        p = self.states.shape[1]
        knots = set(np.round(self.mesh.knots, 12))
        anchors = set(np.round(self.mesh.anchors, 12))
        rows = ["t," + ",".join(f"x_{i+1}" for i in range(p)) + ",flag"]
        for t, x in zip(self.times, self.states):
            key = round(float(t), 12)
            flag = "knot" if key in knots else ("anchor" if key in anchors else "")
            rows.append(",".join(f"{v:.17g}" for v in (float(t), *x)) + "," + flag)
        with open(path, "w") as fh:
            fh.write("\n".join(rows) + "\n")


def sample_grid(mesh: Mesh, lo: float, hi: float, interior: int = 8) -> np.ndarray:
    """Knots, anchors and evenly spaced interior points covering [lo, hi]."""
    brk = mesh.breakpoints(lo, hi)
    pieces = [np.linspace(brk[i], brk[i + 1], interior + 2)
              for i in range(brk.size - 1)]
    return np.unique(np.concatenate(pieces))


class _PiecewiseInterp:
    """Per-interval cubic interpolant; kinks at knots are preserved."""

    def __init__(self, mesh: Mesh, ts: np.ndarray, ys: np.ndarray):
        self.mesh = mesh
        self.lo = float(ts[0])
        self.hi = float(ts[-1])
        self.splines = {}
        for pos in range(mesh.n_intervals):
            a, b = float(mesh.knots[pos]), float(mesh.knots[pos + 1])
            sel = (ts >= a - 1e-12) & (ts <= b + 1e-12)
            if sel.sum() >= 4:
                self.splines[pos] = CubicSpline(ts[sel], ys[sel], axis=0)

    def __call__(self, t: float) -> np.ndarray:
        pos = self.mesh.position(min(max(t, self.lo), self.hi))
        if pos not in self.splines:
            # fall back to a neighbour when the window edge clipped a piece
            pos = min(self.splines) if t < self.mesh.knots[min(self.splines)] else max(self.splines)
        return self.splines[pos](t)


def _phi_g_quad(flow: FlowEvaluator, t_eval: float, g, lo: float, hi: float,
                tol: float) -> np.ndarray:
    """Signed int_lo^hi Phi(t_eval, s) g(s) ds."""
    if lo == hi:
        return np.zeros(flow.dimension)
    if lo > hi:
        return -_phi_g_quad(flow, t_eval, g, hi, lo, tol)
    val, _ = quad_vec(lambda s: flow.phi(t_eval, s) @ np.asarray(g(s), dtype=float),
                      lo, hi, epsabs=tol, epsrel=tol)
    return val


class _VopAssembler:
    """Shared machinery for both variation-of-parameters assemblies."""

    def __init__(self, system: DepcagSystem, tau: float, xi, g,
                 quad_tol: float):
        self.system = system
        self.mesh = system.mesh
        self.flow = system.flow()
        self.cauchy = system.cauchy()
        self.tau = float(tau)
        self.xi = np.asarray(xi, dtype=float)
        self.g = g
        self.tol = quad_tol
        self.i = self.mesh.position(tau)
        self.zeta_i = float(self.mesh.anchors[self.i])
        self.head = (self.xi if g is None else
                     self.xi + _phi_g_quad(self.flow, tau, g, tau, self.zeta_i, self.tol))
        self._adv = {}
        self._del = {}
        self._blk = {}

    def adv(self, k: int) -> np.ndarray:
        # int_{t_k}^{zeta_k} Phi(t_k, s) g(s) ds
        if k not in self._adv:
            t_k = float(self.mesh.knots[k])
            self._adv[k] = _phi_g_quad(self.flow, t_k, self.g, t_k,
                                       float(self.mesh.anchors[k]), self.tol)
        return self._adv[k]

    def dele(self, k: int) -> np.ndarray:
        # int_{zeta_k}^{t_{k+1}} Phi(t_{k+1}, s) g(s) ds
        if k not in self._del:
            t_next = float(self.mesh.knots[k + 1])
            self._del[k] = _phi_g_quad(self.flow, t_next, self.g,
                                       float(self.mesh.anchors[k]), t_next, self.tol)
        return self._del[k]

    def block(self, k: int) -> np.ndarray:
        # int_{zeta_k}^{zeta_{k+1}} Phi(t_{k+1}, s) g(s) ds
        if k not in self._blk:
            t_next = float(self.mesh.knots[k + 1])
            self._blk[k] = _phi_g_quad(self.flow, t_next, self.g,
                                       float(self.mesh.anchors[k]),
                                       float(self.mesh.anchors[k + 1]), self.tol)
        return self._blk[k]

    def _z_to_knots(self, t: float, j: int, lo_k: int, hi_k: int) -> dict:
        """Z(t, t_k) for k in [lo_k, hi_k], built incrementally from Z(t, t_j)."""
        out = {}
        if lo_k > hi_k:
            return out
        z_j = self.cauchy.z(t, float(self.mesh.knots[j]))
        cur = z_j
        for k in range(j, lo_k - 1, -1):
            if lo_k <= k <= hi_k:
                out[k] = cur
            if k > 0:
                cur = cur @ self.cauchy._factors[k - 1]
        cur = z_j
        for k in range(j + 1, hi_k + 1):
            cur = cur @ _inv(self.cauchy._factors[k - 1], f"F_{k-1}")
            if k >= lo_k:
                out[k] = cur
        return out

    def eval_split(self, t: float) -> np.ndarray:
        """Knot/anchor-split assembly."""
        j = self.mesh.position(t)
        i = self.i
        y = self.cauchy.z(t, self.tau) @ self.head
        if self.g is not None:
            if j >= i:
                zk = self._z_to_knots(t, j, i + 1, j + 1)
                for k in range(i + 1, j + 1):
                    y = y + zk[k] @ self.adv(k)
                for k in range(i, j):
                    y = y + zk[k + 1] @ self.dele(k)
            else:
                zk = self._z_to_knots(t, j, j + 1, i + 1)
                for k in range(j + 1, i + 1):
                    y = y - zk[k] @ self.adv(k)
                for k in range(j, i):
                    y = y - zk[k + 1] @ self.dele(k)
            y = y + _phi_g_quad(self.flow, t, self.g,
                                float(self.mesh.anchors[j]), t, self.tol)
        return y

    def eval_blocks(self, t: float) -> np.ndarray:
        """Anchor-block assembly of the same solution."""
        j = self.mesh.position(t)
        i = self.i
        y = self.cauchy.z(t, self.tau) @ self.head
        if self.g is not None:
            if j >= i:
                zk = self._z_to_knots(t, j, i + 1, j)
                for k in range(i, j):
                    y = y + zk[k + 1] @ self.block(k)
            else:
                zk = self._z_to_knots(t, j, j + 1, i)
                for k in range(j, i):
                    y = y - zk[k + 1] @ self.block(k)
            y = y + _phi_g_quad(self.flow, t, self.g,
                                float(self.mesh.anchors[j]), t, self.tol)
        return y


def _make_trajectory(system: DepcagSystem, evaluator, tau: float, t_end: float,
                     sample_times=None, meta=None) -> Trajectory:
    lo, hi = min(tau, t_end), max(tau, t_end)
    ts = (np.asarray(sample_times, dtype=float) if sample_times is not None
          else sample_grid(system.mesh, lo, hi))
    ys = np.array([evaluator(float(t)) for t in ts])
    return Trajectory(ts, ys, evaluator, system.mesh, meta or {})


def solve_linear(system: DepcagSystem, tau: float, xi, t_end: float,
                 quad_tol: float = 1e-12, sample_times=None) -> Trajectory:
    """Variation-of-parameters solution of the forced linear system,
    assembled with the advanced/delayed split at every knot and anchor."""
    asm = _VopAssembler(system, tau, xi, system.g if system.g is not None else None, quad_tol)
    return _make_trajectory(system, asm.eval_split, tau, t_end, sample_times,
                            {"method": "vop_split"})


def solve_linear_wiener(system: DepcagSystem, tau: float, xi, t_end: float,
                        quad_tol: float = 1e-12, sample_times=None) -> Trajectory:
    """Same solution assembled over anchor-to-anchor blocks; an internal
    cross-check of solve_linear."""
    asm = _VopAssembler(system, tau, xi, system.g if system.g is not None else None, quad_tol)
    return _make_trajectory(system, asm.eval_blocks, tau, t_end, sample_times,
                            {"method": "vop_blocks"})


def solve_b_only(system: DepcagSystem, tau: float, xi, t_end: float,
                 quad_tol: float = 1e-12, sample_times=None) -> Trajectory:
    """Specialization with A = 0: the flow is the identity and the solution
    operator degenerates to the chain of J factors."""
    if not system.A.is_zero:
        raise ValueError("solve_b_only needs A = 0")
    return solve_linear(system, tau, xi, t_end, quad_tol, sample_times)


# -- quasilinear Picard iteration -----------------------------------------

def _contraction_report(system: DepcagSystem) -> dict:
    h2 = cert.check_h2(system)
    mesh = system.mesh
    theta = 0.0
    for pos in range(mesh.n_intervals):
        val, _ = quad(system.eta, float(mesh.knots[pos]),
                      float(mesh.knots[pos + 1]), limit=200)
        theta = max(theta, 2.0 * float(val))
    alpha = 0.0
    cauchy = system.cauchy()
    for pos in range(mesh.n_intervals):
        t_i = float(mesh.knots[pos])
        for t in np.linspace(t_i, float(mesh.knots[pos + 1]), 5):
            alpha = max(alpha, float(np.linalg.norm(cauchy.z(float(t), t_i), 2)))
    kappa = alpha * h2.computed["rho_A"] * theta
    return {"alpha": alpha, "rho_A": h2.computed["rho_A"], "theta": theta,
            "contraction_constant": kappa}


def solve_quasilinear(system: DepcagSystem, tau: float, xi, t_end: float,
                      max_iter: int = 200, tol: float = 1e-10,
                      quad_tol: float = 1e-10, interior: int = 12) -> Trajectory:
    """Picard iteration on w(t) = Z(t,tau) xi + int_tau^t G(t,s) f(s,w,w(gamma)) ds.

    The contraction constant alpha*rho(A)*theta is reported in meta; when it
    is >= 1 the solver still runs but flags the precondition.
    """
    if system.f is None:
        traj = solve_linear(system, tau, xi, t_end, quad_tol)
        traj.meta["iterations"] = 0
        return traj
    mesh = system.mesh
    report = _contraction_report(system)
    lo, hi = min(tau, t_end), max(tau, t_end)
    ts = sample_grid(mesh, lo, hi, interior)
    base = solve_linear(system, tau, xi, t_end, quad_tol, sample_times=ts)
    w_vals = base.states.copy()
    w = _PiecewiseInterp(mesh, ts, w_vals)
    g0 = system.g
    last_asm = None
    for it in range(1, max_iter + 1):
        def forcing(s, w=w):
            ws = w(s)
            wg = w(mesh.gamma(s))
            out = np.asarray(system.f(s, ws, wg), dtype=float)
            if g0 is not None:
                out = out + np.asarray(g0(s), dtype=float)
            return out
        asm = _VopAssembler(system, tau, xi, forcing, quad_tol)
        new_vals = np.array([asm.eval_split(float(t)) for t in ts])
        delta = float(np.max(np.linalg.norm(new_vals - w_vals, axis=1)))
        w_vals = new_vals
        w = _PiecewiseInterp(mesh, ts, w_vals)
        last_asm = asm
        if delta <= tol:
            meta = {"iterations": it, "last_delta": delta, **report}
            if report["contraction_constant"] >= 1.0:
                meta["contraction_warning"] = True
            return Trajectory(ts, w_vals, last_asm.eval_split, mesh, meta)
    raise MaxIterExceeded(f"Picard iteration did not reach {tol} in {max_iter} steps "
                          f"(last delta {delta:.3e}, contraction {report['contraction_constant']:.3f})")


# -- independent oracle ----------------------------------------------------

def oracle_integrate(system: DepcagSystem, tau: float, xi, t_end: float,
                     tol: float = 1e-12, max_anchor_iter: int = 60) -> Trajectory:
    """Interval-by-interval integration, independent of Z and Green kernels.

    On each interval the anchor value v(zeta_i) is resolved first: linearly
    by one augmented solve for linear systems, by damped fixed point when a
    perturbation is present; then the interval is integrated with dense
    output.  Forward in time only.
    """
    if t_end < tau:
        raise ValueError("oracle integrates forward only")
    mesh = system.mesh
    p = system.dimension
    xi = np.asarray(xi, dtype=float)
    pos_start = mesh.position(tau)
    pos_end = mesh.position(t_end)
    segments = []

    def ivp(rhs, t0, t1, y0, dense=False):
        if t0 == t1:
            return None, y0
        sol = solve_ivp(rhs, (t0, t1), y0, method="DOP853", rtol=tol,
                        atol=tol, dense_output=dense)
        if not sol.success:
            raise AnchorSolveFailure(f"integration failed on ({t0}, {t1}): {sol.message}")
        return sol, sol.y[:, -1]

    t_cur, x_cur = float(tau), xi
    for pos in range(pos_start, pos_end + 1):
        zeta = float(mesh.anchors[pos])
        t_next = float(mesh.knots[pos + 1])

        if system.f is None:
            # affine anchor solve: v = u0 + U c with U the response to the
            # anchor value, so c solves (I - U(zeta)) c = u0(zeta)
            def rhs_aug(t, state):
                u0 = state[:p]
                U = state[p:].reshape(p, p)
                A = system.A(t)
                B = system.B(t)
                return np.concatenate([A @ u0 + system.g_vec(t),
                                       (A @ U + B).ravel()])
            y0 = np.concatenate([x_cur, np.zeros(p * p)])
            _, yz = ivp(rhs_aug, t_cur, zeta, y0)
            u0z, Uz = yz[:p], yz[p:].reshape(p, p)
            c = np.linalg.solve(np.eye(p) - Uz, u0z)
        else:
            def anchor_map(c):
                def rhs(t, v):
                    return (system.A(t) @ v + system.B(t) @ c
                            + system.g_vec(t)
                            + np.asarray(system.f(t, v, c), dtype=float))
                _, vz = ivp(rhs, t_cur, zeta, x_cur)
                return vz
            # Newton on c -> anchor_map(c) - c with a finite-difference
            # Jacobian; the map is affine up to the perturbation
            c = x_cur.copy()
            for itn in range(max_anchor_iter):
                r = anchor_map(c) - c
                if np.linalg.norm(r) <= tol * (1.0 + np.linalg.norm(c)):
                    break
                Jac = np.empty((p, p))
                hstep = 1e-7 * (1.0 + np.linalg.norm(c))
                for col in range(p):
                    dc = c.copy()
                    dc[col] += hstep
                    Jac[:, col] = ((anchor_map(dc) - dc) - r) / hstep
                try:
                    step = np.linalg.solve(Jac, -r)
                except np.linalg.LinAlgError:
                    raise AnchorSolveFailure(f"anchor Jacobian singular on interval {pos}")
                c = c + step
            else:
                raise AnchorSolveFailure(f"anchor value did not converge on interval {pos}")

        def rhs_full(t, v, c=c):
            out = system.A(t) @ v + system.B(t) @ c + system.g_vec(t)
            if system.f is not None:
                out = out + np.asarray(system.f(t, v, c), dtype=float)
            return out
        sol, x_next = ivp(rhs_full, t_cur, t_next, x_cur, dense=True)
        if sol is not None:
            segments.append((t_cur, t_next, sol.sol))
        t_cur, x_cur = t_next, x_next

    def dense(t: float) -> np.ndarray:
        if t < tau - 1e-12 or t > segments[-1][1] + 1e-12:
            raise ValueError(f"t={t} outside integrated range")
        for a, b, f in segments:
            if a - 1e-12 <= t <= b + 1e-12:
                return f(min(max(t, a), b))
        return segments[-1][2](segments[-1][1])

    return _make_trajectory(system, dense, tau, t_end,
                            meta={"method": "oracle"})


# -- bounded solutions -----------------------------------------------------

def _block_integral(flow, mesh, g, pos: int, tol: float) -> np.ndarray:
    t_next = float(mesh.knots[pos + 1])
    hi = float(mesh.anchors[pos + 1]) if pos + 1 < mesh.n_intervals else float(mesh.t_max)
    return _phi_g_quad(flow, t_next, g, float(mesh.anchors[pos]), hi, tol)


def _tail_term(flow, mesh, g, t: float, tol: float) -> np.ndarray:
    j = mesh.position(t)
    return _phi_g_quad(flow, t, g, float(mesh.anchors[j]), t, tol)


def _g_bound(g, mesh: Mesh, n: int = 200) -> float:
    ts = np.linspace(mesh.t_min, mesh.t_max, n)
    return float(max(np.linalg.norm(np.asarray(g(t), dtype=float)) for t in ts))


def bounded_solution_forward(system: DepcagSystem, kernel: GreenKernel,
                             decay: tuple[float, float] | None = None,
                             tol: float = 1e-10, t_start: float | None = None,
                             sample_times=None) -> Trajectory:
    """The bounded solution accumulated from the past: knot-block series
    truncated when the decay-certificate tail bound drops below tol."""
    mesh = system.mesh
    flow, cauchy = system.flow(), system.cauchy()
    if decay is None:
        c, sigma, _ = cauchy.estimate_decay(mesh.t_min, mesh.t_max - mesh.t_min)
    else:
        c, sigma = decay
    if sigma <= 0:
        raise NoDecayCertificate(f"needs sigma > 0, got {sigma}")
    g = system.g_vec
    wnorm = _g_bound(g, mesh)
    if t_start is None:
        t_start = 0.5 * (mesh.t_min + mesh.t_max)
    blocks = {}

    def evaluator(t: float) -> np.ndarray:
        j = mesh.position(t)
        y = _tail_term(flow, mesh, g, t, tol)
        truncated = False
        for k in range(j - 1, -1, -1):
            t_next = float(mesh.knots[k + 1])
            bound = c * np.exp(-sigma * (t - t_next)) * wnorm * mesh.tbar() * 2.0
            if bound < tol:
                truncated = True
                break
            if k not in blocks:
                blocks[k] = _block_integral(flow, mesh, g, k, tol)
            y = y + cauchy.z(t, t_next) @ blocks[k]
        if not truncated:
            edge = c * np.exp(-sigma * (t - mesh.t_min)) * wnorm * mesh.tbar() * 2.0
            if edge > tol:
                raise TailNotConvergent(
                    f"window too short at t={t}: edge tail bound {edge:.2e} > {tol:.2e}")
        return y

    return _make_trajectory(system, evaluator, t_start, mesh.t_max, sample_times,
                            {"c": c, "sigma": sigma, "g_bound": wnorm})


def bounded_solution_backward(system: DepcagSystem, kernel: GreenKernel,
                              decay: tuple[float, float] | None = None,
                              tol: float = 1e-10, t_end: float | None = None,
                              sample_times=None) -> Trajectory:
    """Mirror construction accumulated from the future, for systems whose
    operator decays backward in time."""
    mesh = system.mesh
    flow, cauchy = system.flow(), system.cauchy()
    if decay is None:
        # fit of ||Z(t_min + , t_k)|| growth read backward
        ref = mesh.t_min
        ts = mesh.knots[2:]
        lognorms = [np.log(np.linalg.norm(cauchy.z(ref, float(t)), 2)) for t in ts]
        A = np.column_stack([np.asarray(ts) - ref, np.ones(len(ts))])
        coef, *_ = np.linalg.lstsq(A, np.asarray(lognorms), rcond=None)
        c, sigma = float(np.exp(coef[1])), float(-coef[0])
    else:
        c, sigma = decay
    if sigma <= 0:
        raise NoDecayCertificate(f"needs backward sigma > 0, got {sigma}")
    g = system.g_vec
    wnorm = _g_bound(g, mesh)
    if t_end is None:
        t_end = 0.5 * (mesh.t_min + mesh.t_max)
    blocks = {}

    def evaluator(t: float) -> np.ndarray:
        j = mesh.position(t)
        y = _tail_term(flow, mesh, g, t, tol)
        truncated = False
        for k in range(j, mesh.n_intervals):
            t_next = float(mesh.knots[k + 1])
            bound = c * np.exp(-sigma * (t_next - t)) * wnorm * mesh.tbar() * 2.0
            if bound < tol:
                truncated = True
                break
            if k not in blocks:
                blocks[k] = _block_integral(flow, mesh, g, k, tol)
            y = y - cauchy.z(t, t_next) @ blocks[k]
        if not truncated:
            edge = c * np.exp(-sigma * (mesh.t_max - t)) * wnorm * mesh.tbar() * 2.0
            if edge > tol:
                raise TailNotConvergent(
                    f"window too short at t={t}: edge tail bound {edge:.2e} > {tol:.2e}")
        return y

    return _make_trajectory(system, evaluator, mesh.t_min, t_end, sample_times,
                            {"c": c, "sigma": sigma})


def bounded_solution_dichotomy(system: DepcagSystem, kernel: GreenKernel,
                               decay: tuple[float, float] | None = None,
                               tol: float = 1e-10,
                               sample_times=None) -> Trajectory:
    """Bilateral bounded solution through the projected kernel: block sums in
    both time directions plus the local flow term."""
    mesh = system.mesh
    flow = system.flow()
    kernel._require_p()
    g = system.g_vec
    blocks = {}

    def evaluator(t: float) -> np.ndarray:
        y = _tail_term(flow, mesh, g, t, tol)
        for k in range(mesh.n_intervals):
            if k not in blocks:
                blocks[k] = _block_integral(flow, mesh, g, k, tol)
            t_next = float(mesh.knots[k + 1])
            y = y + kernel.zp(t, t_next) @ blocks[k]
        return y

    margin = 0.15 * (mesh.t_max - mesh.t_min)
    traj = _make_trajectory(system, evaluator,
                            mesh.t_min + margin, mesh.t_max - margin,
                            sample_times, {"decay": decay})
    return traj


# -- asymptotic equivalence ------------------------------------------------

def _ctilde_empirical(kernel: GreenKernel, n: int = 20) -> float:
    mesh = kernel.mesh
    ts = np.linspace(mesh.t_min, mesh.t_max, n)
    worst = 0.0
    for t in ts:
        for s in ts:
            worst = max(worst, float(np.linalg.norm(
                kernel.green_dichotomy(float(t), float(s)), 2)))
    return worst


def equivalence_map(system_linear_g: DepcagSystem, system_g_plus_f: DepcagSystem,
                    y: Trajectory, kernel: GreenKernel, t0: float,
                    max_iter: int = 30, tol: float = 1e-10,
                    quad_tol: float = 1e-10) -> Trajectory:
    """Bounded solution v of the perturbed system matched to the bounded
    solution y of the forced linear system, by Picard iteration on
    v(t) = y(t) + int_{t0}^inf Gtilde(t,s) f(s, v(s), v(gamma(s))) ds."""
    sysp = system_g_plus_f
    mesh = sysp.mesh
    ctilde = _ctilde_empirical(kernel)
    eta_int, _ = quad(sysp.eta, t0, mesh.t_max, limit=200)
    beta = 2.0 * ctilde * float(eta_int)
    if beta >= 1.0:
        raise NoContraction(f"beta={beta:.4f} >= 1")
    t_lo = min(t0, mesh.gamma(t0))
    ts = sample_grid(mesh, t_lo, mesh.t_max)
    v_vals = np.array([y(float(t)) for t in ts])
    v = _PiecewiseInterp(mesh, ts, v_vals)
    horizon = mesh.t_max
    for it in range(1, max_iter + 1):
        def forcing(s, v=v):
            return np.asarray(sysp.f(s, v(s), v(mesh.gamma(s))), dtype=float)
        op = kernel.gtilde_operator(forcing, t0, horizon, quad_tol)
        new_vals = np.array([y(float(t)) + op(float(t)) for t in ts])
        delta = float(np.max(np.linalg.norm(new_vals - v_vals, axis=1)))
        v_vals = new_vals
        v = _PiecewiseInterp(mesh, ts, v_vals)
        if delta <= tol:
            break
    else:
        raise MaxIterExceeded(f"equivalence map did not converge in {max_iter} iterations")
    meta = {"beta": beta, "ctilde": ctilde, "iterations": it,
            "lipschitz_forward": 1.0 / (1.0 - beta),
            "lipschitz_inverse": 1.0 + beta, "horizon": horizon}
    return Trajectory(ts, v_vals, v, mesh, meta)


def equivalence_inverse(system_g_plus_f: DepcagSystem, v: Trajectory,
                        kernel: GreenKernel, t0: float,
                        quad_tol: float = 1e-10) -> Trajectory:
    """Inverse direction of the correspondence: y(t) = v(t) - int Gtilde f(v)."""
    sysp = system_g_plus_f
    mesh = sysp.mesh

    def forcing(s):
        return np.asarray(sysp.f(s, v(s), v(mesh.gamma(s))), dtype=float)

    op = kernel.gtilde_operator(forcing, t0, mesh.t_max, quad_tol)

    def evaluator(t: float) -> np.ndarray:
        return v(t) - op(t)

    ts = v.times
    ys = np.array([evaluator(float(t)) for t in ts])
    return Trajectory(ts, ys, evaluator, mesh, {"direction": "inverse"})


def nonlinear_bounded(system: DepcagSystem, kernel: GreenKernel, xi,
                      t0: float, decay: tuple[float, float],
                      eta0: float | None = None, max_iter: int = 100,
                      tol: float = 1e-10, quad_tol: float = 1e-10) -> Trajectory:
    """Decaying solution of the perturbed system with initial projection
    value xi in range(P), built by Picard iteration on
    w(t) = Z(t,t0) xi + int_{t0}^inf Gtilde(t,s) f(s, w, w(gamma)) ds."""
    P = kernel._require_p()
    mesh = system.mesh
    cauchy = system.cauchy()
    xi = np.asarray(xi, dtype=float)
    if np.linalg.norm(P @ xi - xi) > 1e-8 * max(1.0, np.linalg.norm(xi)):
        raise XiNotInRange("xi must lie in the range of P")
    c, sigma = decay
    h2 = cert.check_h2(system)
    rho_a = float(h2.computed["rho_A"])
    tbar = mesh.tbar()
    if eta0 is None:
        eta0 = float(max(system.eta(t) for t in np.linspace(mesh.t_min, mesh.t_max, 200)))
    chat = c * rho_a * np.exp(sigma * tbar)
    beta = 2.0 * chat * eta0 / sigma
    theta = 2.0 * c * tbar * eta0 * rho_a * np.exp(2.0 * sigma * tbar)
    if beta >= 1.0 or theta >= 1.0:
        raise NoContraction(f"beta={beta:.4f}, theta={theta:.4f}; both must be < 1")
    mu = (2.0 - theta) / (1.0 - theta)
    sigma0 = sigma - mu / (1.0 - beta) * chat * eta0 * np.exp(sigma * tbar)
    t_lo = min(t0, mesh.gamma(t0))
    ts = sample_grid(mesh, t_lo, mesh.t_max)
    base = np.array([cauchy.z(float(t), t0) @ xi for t in ts])
    w_vals = base.copy()
    w = _PiecewiseInterp(mesh, ts, w_vals)
    for it in range(1, max_iter + 1):
        def forcing(s, w=w):
            return np.asarray(system.f(s, w(s), w(mesh.gamma(s))), dtype=float)
        op = kernel.gtilde_operator(forcing, t0, mesh.t_max, quad_tol)
        new_vals = base + np.array([op(float(t)) for t in ts])
        delta = float(np.max(np.linalg.norm(new_vals - w_vals, axis=1)))
        w_vals = new_vals
        w = _PiecewiseInterp(mesh, ts, w_vals)
        if delta <= tol:
            break
    else:
        raise MaxIterExceeded(f"did not converge in {max_iter} iterations")
    envelope = ((1.0 / (1.0 - beta)) * c * np.linalg.norm(xi)
                * np.exp(-sigma0 * (ts - t0)))
    violations = int(np.sum(np.linalg.norm(w_vals, axis=1) > envelope + 1e-12))
    meta = {"beta": beta, "theta": theta, "mu": mu, "sigma0": sigma0,
            "chat": chat, "iterations": it, "envelope_violations": violations}
    return Trajectory(ts, w_vals, w, mesh, meta)


# -- residual diagnostics --------------------------------------------------

def trajectory_residual(system: DepcagSystem, traj: Trajectory,
                        n_samples: int = 100, h: float = 1e-5) -> float:
    """Max norm of w'(t) - A w - B w(gamma) - g - f over interior samples,
    with w' from central differences of the dense output.

    h trades finite-difference truncation against evaluator noise: dense
    outputs built from quadratures at tolerance tol contribute about tol/h
    to the reported residual."""
    mesh = system.mesh
    lo, hi = float(traj.times[0]), float(traj.times[-1])
    worst = 0.0
    ts = np.linspace(lo, hi, n_samples + 2)[1:-1]
    for t in ts:
        t = float(t)
        pos = mesh.position(t)
        a, b = float(mesh.knots[pos]), float(mesh.knots[pos + 1])
        if t - a < 2 * h or b - t < 2 * h:
            continue
        wd = (traj(t + h) - traj(t - h)) / (2 * h)
        wt = traj(t)
        rhs = system.A(t) @ wt + system.B(t) @ traj(mesh.gamma(t)) + system.g_vec(t)
        if system.f is not None:
            rhs = rhs + np.asarray(system.f(t, wt, traj(mesh.gamma(t))), dtype=float)
        worst = max(worst, float(np.linalg.norm(wd - rhs)))
    return worst
