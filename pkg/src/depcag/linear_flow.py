"""Ordinary flow Phi(t,s) of x' = A(t)x and the interval matrices J and E.

J(t,tau) = I + int_tau^t Phi(tau,s) B(s) ds is the correction that turns the
ordinary flow into the interval solution operator E(t,tau) = Phi(t,tau) J(t,tau)
of the piecewise-constant-argument system.  Invertibility of E at the knots
is the precondition for the whole solution-operator construction and is
checked by ``check_h4``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad_vec, solve_ivp
from scipy.linalg import expm

from .certificates import FAIL, PASS, Certificate
from .coefficients import CoefficientFunction
from .errors import IntegrationFailure
from .mesh import Mesh

_COND_LIMIT = 1e6


@dataclass
class FlowEvaluator:
    """Evaluator for the fundamental matrix Phi(t,s) of x' = A(t)x."""

    A: CoefficientFunction
    rtol: float = 1e-12
    atol: float = 1e-12
    _eig: tuple | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.A.is_constant:
            # diagonalization fast path; ill-conditioned eigenbases fall
            # back to scaling-and-squaring per call
            w, V = np.linalg.eig(self.A.matrix)
            if np.linalg.cond(V) < _COND_LIMIT:
                self._eig = (w, V, np.linalg.inv(V))

    @property
    def dimension(self) -> int:
        return self.A.dimension

    @property
    def method(self) -> str:
        return "exact_exponential" if self.A.is_constant else "adaptive_integration"

    def phi(self, t: float, s: float) -> np.ndarray:
        p = self.dimension
        if t == s:
            return np.eye(p)
        if self.A.is_constant:
            if self._eig is not None:
                w, V, Vinv = self._eig
                out = (V * np.exp((t - s) * w)) @ Vinv
                return out.real if not np.iscomplexobj(self.A.matrix) else out
            return expm((t - s) * self.A.matrix)
        sol = solve_ivp(lambda u, y: (self.A(u) @ y.reshape(p, p)).ravel(),
                        (s, t), np.eye(p).ravel(), method="DOP853",
                        rtol=self.rtol, atol=self.atol)
        if not sol.success:
            raise IntegrationFailure(f"flow integration failed on ({s}, {t}): {sol.message}")
        return sol.y[:, -1].reshape(p, p)


def _jintegral_constant(A: np.ndarray, B: np.ndarray, h: float) -> np.ndarray:
    """int_0^h exp(-u A) B du via the block-exponential identity."""
    p = A.shape[0]
    M = np.zeros((2 * p, 2 * p))
    M[:p, :p] = -A
    M[:p, p:] = B
    return expm(M * h)[:p, p:]


def jmatrix(flow: FlowEvaluator, B: CoefficientFunction, t: float, tau: float,
            quad_tol: float = 1e-12) -> np.ndarray:
    """I + int_tau^t Phi(tau,s) B(s) ds; the sign flips with orientation."""
    p = flow.dimension
    if t == tau or B.is_zero:
        return np.eye(p)
    if flow.A.is_constant and B.is_constant:
        return np.eye(p) + _jintegral_constant(flow.A.matrix, B.matrix, t - tau)
    if flow.A.is_constant:
        A = flow.A.matrix
        val, err = quad_vec(lambda s: expm((tau - s) * A) @ B(s), tau, t,
                            epsabs=quad_tol, epsrel=quad_tol)
        if not np.all(np.isfinite(val)):
            raise IntegrationFailure(f"quadrature for J failed on ({tau}, {t}), err={err}")
        return np.eye(p) + val
    # time-varying A: propagate Y(s) = Phi(tau,s) jointly with the integral,
    # avoiding one flow solve per quadrature node
    def rhs(s, state):
        Y = state[:p * p].reshape(p, p)
        dY = -Y @ flow.A(s)
        dK = Y @ B(s)
        return np.concatenate([dY.ravel(), dK.ravel()])
    y0 = np.concatenate([np.eye(p).ravel(), np.zeros(p * p)])
    sol = solve_ivp(rhs, (tau, t), y0, method="DOP853",
                    rtol=flow.rtol, atol=flow.atol)
    if not sol.success:
        raise IntegrationFailure(f"joint integration for J failed on ({tau}, {t}): {sol.message}")
    return np.eye(p) + sol.y[p * p:, -1].reshape(p, p)


def ematrix(flow: FlowEvaluator, B: CoefficientFunction, t: float,
            tau: float) -> np.ndarray:
    """Interval solution operator E(t,tau) = Phi(t,tau) J(t,tau)."""
    return flow.phi(t, tau) @ jmatrix(flow, B, t, tau)


def check_h4(flow: FlowEvaluator, B: CoefficientFunction, mesh: Mesh,
             threshold: float = 1e-10, grid: int = 33) -> Certificate:
    """Non-singularity of J(t, zeta_i) sampled on each interval.

    Heuristic, not a proof: passes when every sampled minimum singular value
    exceeds threshold times the matrix norm; the weakest sample is reported.
    """
    worst = np.inf
    worst_at = (None, None)
    for pos in range(mesh.n_intervals):
        i = pos + mesh.index_offset
        zeta = mesh.anchor(i)
        for t in np.linspace(mesh.knots[pos], mesh.knots[pos + 1], grid):
            J = jmatrix(flow, B, float(t), zeta)
            rel = float(np.linalg.svd(J, compute_uv=False)[-1]) / max(np.linalg.norm(J, 2), 1e-300)
            if rel < worst:
                worst = rel
                worst_at = (i, float(t))
    verdict = PASS if worst > threshold else FAIL
    return Certificate(
        "h4", {"threshold": threshold, "grid": grid},
        {"min_rel_singular_value": worst, "weakest_interval": worst_at[0],
         "weakest_t": worst_at[1]},
        verdict,
        ["sampled non-singularity, heuristic certificate"],
    )
