"""Solution operator Z(t,s) of the homogeneous piecewise-argument system.

For t >= tau, Z is the backward product of interval factors

    Z(t,tau) = E(t,zeta_j) E(t_j,zeta_j)^{-1} ... E(t_{i+1},zeta_i) E(tau,zeta_i)^{-1}

with i, j the intervals of tau and t; for t < tau the forward product is
formed and inverted once.  The knot-to-knot factors F_k = Z(t_{k+1},t_k)
generate the induced difference equation on the knots and are cached at
construction.
"""

from __future__ import annotations

import numpy as np

from .coefficients import CoefficientFunction
from .errors import InsufficientData, SingularFactor
from .linear_flow import FlowEvaluator, ematrix
from .mesh import Mesh

_COND_LIMIT = 1e12


def _inv(M: np.ndarray, what: str, limit: float = _COND_LIMIT) -> np.ndarray:
    sv = np.linalg.svd(M, compute_uv=False)
    if sv[-1] <= 0 or sv[0] / sv[-1] > limit:
        raise SingularFactor(f"{what} is singular or too ill-conditioned")
    return np.linalg.inv(M)


class CauchyOperator:
    """Evaluator for Z(t,s) over a fixed mesh window."""

    def __init__(self, flow: FlowEvaluator, B: CoefficientFunction, mesh: Mesh):
        if flow.dimension != B.dimension:
            raise ValueError("A and B dimensions differ")
        self.flow = flow
        self.B = B
        self.mesh = mesh
        n = mesh.n_intervals
        self._e_left = []       # E(t_k, zeta_k)
        self._e_left_inv = []
        self._factors = []      # F_k = E(t_{k+1}, zeta_k) E(t_k, zeta_k)^{-1}
        for pos in range(n):
            zeta = float(mesh.anchors[pos])
            el = ematrix(flow, B, float(mesh.knots[pos]), zeta)
            er = ematrix(flow, B, float(mesh.knots[pos + 1]), zeta)
            eli = _inv(el, f"E(t_{pos + mesh.index_offset}, zeta)")
            self._e_left.append(el)
            self._e_left_inv.append(eli)
            self._factors.append(er @ eli)

    @property
    def dimension(self) -> int:
        return self.flow.dimension

    def _e(self, t: float, pos: int) -> np.ndarray:
        return ematrix(self.flow, self.B, t, float(self.mesh.anchors[pos]))

    def z(self, t: float, tau: float) -> np.ndarray:
        if t == tau:
            return np.eye(self.dimension)
        if t < tau:
            # a long hyperbolic product is legitimately ill-conditioned even
            # though every factor is fine; only reject near machine rank loss
            return _inv(self.z(tau, t), f"Z({tau}, {t})", limit=1e15)
        i = self.mesh.position(tau)
        j = self.mesh.position(t)
        if i == j:
            return self._e(t, i) @ _inv(self._e(tau, i), f"E({tau}, zeta)")
        M = self._e(t, j) @ self._e_left_inv[j]
        for k in range(j - 1, i, -1):
            M = M @ self._factors[k]
        tail = self._e(float(self.mesh.knots[i + 1]), i) @ _inv(self._e(tau, i), f"E({tau}, zeta)")
        return M @ tail

    def propagate(self, tau: float, xi: np.ndarray, t: float) -> np.ndarray:
        """Unique solution through (tau, xi), evaluated at t."""
        return self.z(t, tau) @ np.asarray(xi, dtype=float)

    def monodromy_factors(self) -> list[np.ndarray]:
        """Knot-to-knot transition matrices F_k = Z(t_{k+1}, t_k)."""
        return [F.copy() for F in self._factors]

    def estimate_decay(self, t0: float, horizon: float) -> tuple[float, float, float]:
        """Least-squares exponential decay fit of ||Z(t_k, t0)|| over knots.

        Returns (c, sigma, fit_residual): positive sigma with a small
        residual is numerical evidence of exponential stability, not proof.
        """
        knots = self.mesh.knots
        sel = (knots >= t0) & (knots <= t0 + horizon) & (knots > t0)
        ts = knots[sel]
        if ts.size < 10:
            raise InsufficientData(f"horizon spans only {ts.size} knots, need >= 10")
        dts = ts - t0
        lognorms = np.array([np.log(np.linalg.norm(self.z(float(t), t0), 2)) for t in ts])
        A = np.column_stack([dts, np.ones_like(dts)])
        coef, *_ = np.linalg.lstsq(A, lognorms, rcond=None)
        resid = float(np.sqrt(np.mean((lognorms - A @ coef) ** 2)))
        return float(np.exp(coef[1])), float(-coef[0]), resid

    def dump_decay_csv(self, path, t0: float) -> None:
        """Write (t_k, ||Z(t_k,t0)||, log norm) rows for knots at or after t0."""
        rows = ["t,norm,lognorm"]
        for t in self.mesh.knots[self.mesh.knots >= t0]:
            nrm = float(np.linalg.norm(self.z(float(t), t0), 2))
            rows.append(f"{float(t):.17g},{nrm:.17g},{np.log(nrm):.17g}")
        with open(path, "w") as fh:
            fh.write("\n".join(rows) + "\n")
