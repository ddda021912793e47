"""Green matrices of the piecewise-argument system.

Four kernels: the single-interval kernel G_k, the global kernel G used by
variation of parameters, the projected kernel Z_P, and the dichotomy kernel
G_tilde used for bounded solutions on the whole line.

G is evaluated in its anchor-block product form

    G(t,s) = Z(t, t_{k+1}) Phi(t_{k+1}, s)   for s in [zeta_k, zeta_{k+1}],

which is the unique kernel consistent with the variation-of-parameters
solution; the dichotomy kernel replaces Z by Z_P in the block form and adds
a +-Phi(t,s) correction on the stretch between zeta_{i(t)} and t.  With
B = 0 it collapses to Z_P(t,s) exactly.
"""

from __future__ import annotations

import numpy as np
from scipy.integrate import quad_vec

from .cauchy_operator import CauchyOperator
from .errors import MissingProjection, OutOfWindow, SingularFactor
from .linear_flow import FlowEvaluator

_PROJ_TOL = 1e-9


def spectral_projection(F: np.ndarray) -> np.ndarray:
    """Projection onto the span of eigenvectors of F inside the unit circle.

    Intended for the knot-to-knot factor of a constant-coefficient system on
    a uniform mesh, where all factors coincide.
    """
    w, V = np.linalg.eig(F)
    if np.linalg.cond(V) > 1e8:
        raise MissingProjection("transition factor is too defective for a spectral projection; supply P")
    if np.any(np.isclose(np.abs(w), 1.0, atol=1e-9)):
        raise MissingProjection("transition factor has eigenvalues on the unit circle; supply P")
    D = np.diag((np.abs(w) < 1.0).astype(float))
    P = V @ D @ np.linalg.inv(V)
    P = P.real
    if np.linalg.norm(P @ P - P, 2) > _PROJ_TOL:
        raise MissingProjection("computed spectral projection is not idempotent; supply P")
    return P


class GreenKernel:
    """Kernel evaluator; the projection is optional and only required by the
    dichotomy kernels."""

    def __init__(self, cauchy: CauchyOperator, flow: FlowEvaluator | None = None,
                 projection: np.ndarray | None = None,
                 base_point: float | None = None):
        self.cauchy = cauchy
        self.flow = flow if flow is not None else cauchy.flow
        self.mesh = cauchy.mesh
        if base_point is None:
            base_point = 0.0 if self.mesh.t_min <= 0.0 <= self.mesh.t_max else self.mesh.t_min
        self.base_point = float(base_point)
        if projection is not None:
            projection = np.atleast_2d(np.asarray(projection, dtype=float))
            err = np.linalg.norm(projection @ projection - projection, 2)
            if err > _PROJ_TOL * max(1.0, np.linalg.norm(projection, 2)):
                raise MissingProjection(f"P is not idempotent (||P^2-P||={err:.2e})")
        self.projection = projection
        self._zb_cache: dict[float, np.ndarray] = {}

    @classmethod
    def with_default_projection(cls, cauchy: CauchyOperator,
                                base_point: float | None = None) -> "GreenKernel":
        """Spectral projection of the first knot-to-knot factor; meaningful
        for constant coefficients on a uniform mesh."""
        P = spectral_projection(cauchy.monodromy_factors()[0])
        return cls(cauchy, projection=P, base_point=base_point)

    # -- block bookkeeping ------------------------------------------------

    def _block(self, s: float) -> int:
        """Position k of the anchor block zeta_k <= s < zeta_{k+1}, clamped to
        the window; the block's right knot t_{k+1} always lies in the window."""
        anchors = self.mesh.anchors
        if s < self.mesh.t_min or s > self.mesh.t_max:
            raise OutOfWindow(f"s={s} outside mesh window")
        pos = int(np.searchsorted(anchors, s, side="right")) - 1
        return min(max(pos, -1), anchors.size - 1)

    def _block_right_knot(self, pos: int) -> float:
        return float(self.mesh.knots[pos + 1])

    # -- kernels ----------------------------------------------------------

    def green_local(self, k: int, t: float, s: float) -> np.ndarray:
        """Single-interval kernel G_k for t, s in [t_k, t_{k+1}]."""
        t_k = self.mesh.knot(k)
        t_next = self.mesh.knot(k + 1)
        zeta = self.mesh.anchor(k)
        if not (t_k <= t <= t_next and t_k <= s <= t_next):
            raise OutOfWindow(f"(t,s)=({t},{s}) outside interval [{t_k},{t_next}]")
        if s <= zeta:
            if s < t:
                return self.cauchy.z(t, t_k) @ self.flow.phi(t_k, s)
            return self.flow.phi(t, s)
        if t >= s:
            return self.flow.phi(t, s)
        return self.cauchy.z(t, t_next) @ self.flow.phi(t_next, s)

    def green_global(self, t: float, s: float) -> np.ndarray:
        """Global kernel in anchor-block product form."""
        tk1 = self._block_right_knot(self._block(s))
        return self.cauchy.z(t, tk1) @ self.flow.phi(tk1, s)

    def _require_p(self) -> np.ndarray:
        if self.projection is None:
            raise MissingProjection("this kernel needs a projection matrix")
        return self.projection

    def zp(self, t: float, s: float) -> np.ndarray:
        """Projected kernel: Z(t,b) P Z(b,s) for t >= s, else -Z(t,b)(I-P)Z(b,s)."""
        P = self._require_p()
        b = self.base_point
        zt = self.cauchy.z(t, b)
        zs = self.cauchy.z(b, s)
        if t >= s:
            return zt @ P @ zs
        return -zt @ (np.eye(P.shape[0]) - P) @ zs

    def green_dichotomy(self, t: float, s: float) -> np.ndarray:
        """Dichotomy kernel: anchor-block form of zp plus the near-t
        correction; the kernel behind the bilateral bounded solution."""
        tk1 = self._block_right_knot(self._block(s))
        val = self.zp(t, tk1) @ self.flow.phi(tk1, s)
        zeta_t = self.mesh.gamma(t)
        if min(t, zeta_t) <= s <= max(t, zeta_t):
            if s <= t:
                val = val + self.flow.phi(t, s)
            else:
                val = val - self.flow.phi(t, s)
        return val

    # -- integral assembly -------------------------------------------------

    def _vec_quad(self, func, lo: float, hi: float, tol: float) -> np.ndarray:
        """Orientation-signed vector quadrature."""
        if lo == hi:
            return np.zeros(self.cauchy.dimension)
        if lo > hi:
            return -self._vec_quad(func, hi, lo, tol)
        val, _ = quad_vec(func, lo, hi, epsabs=tol, epsrel=tol)
        return val

    def _z_from_base(self, s: float) -> np.ndarray:
        """Z(b, s) with a per-kernel cache; s is always a knot or anchor of
        the mesh, so the cache stays small."""
        hit = self._zb_cache.get(s)
        if hit is None:
            hit = self.cauchy.z(self.base_point, s)
            self._zb_cache[s] = hit
        return hit

    def gtilde_operator(self, func, t0: float, t_end: float,
                        tol: float = 1e-12):
        """Callable t -> int_{t0}^{t_end} Gtilde(t,s) func(s) ds with the
        block integrals of func computed once up front.

        func maps s to a vector.  Every stretch of s is transported through
        the right knot of its own anchor block, with the first block clipped
        at t0; the stretch between zeta_{i(t)} and t, clipped at t0 as well,
        is corrected by +-Phi(t,s).  Anchoring everything at block knots
        keeps the result continuous in t, including at t = t0.
        """
        P = self._require_p()
        Q = np.eye(P.shape[0]) - P
        mesh = self.mesh
        anchors = mesh.anchors
        pieces = []
        for pos in range(self._block(t0), anchors.size):
            lo = float(anchors[pos]) if pos >= 0 else mesh.t_min
            lo = max(lo, t0)
            hi = float(anchors[pos + 1]) if pos + 1 < anchors.size else mesh.t_max
            hi = min(hi, t_end)
            if hi <= lo:
                continue
            tk1 = float(mesh.knots[pos + 1])
            pieces.append((tk1, self._vec_quad(
                lambda s: self.flow.phi(tk1, s) @ func(s), lo, hi, tol)))
        b = self.base_point

        def evaluate(t: float) -> np.ndarray:
            zt = self.cauchy.z(t, b)
            total = np.zeros(self.cauchy.dimension)
            for knot_t, w in pieces:
                v = self._z_from_base(knot_t) @ w
                if t >= knot_t:
                    total = total + zt @ (P @ v)
                else:
                    total = total - zt @ (Q @ v)
            lo_t = max(mesh.gamma(t), t0)
            return total + self._vec_quad(
                lambda s: self.flow.phi(t, s) @ func(s), lo_t, t, tol)

        return evaluate

    def integrate_gtilde(self, t: float, func, t0: float, t_end: float,
                         tol: float = 1e-12) -> np.ndarray:
        """int_{t0}^{t_end} Gtilde(t,s) func(s) ds; see ``gtilde_operator``
        for the assembly."""
        return self.gtilde_operator(func, t0, t_end, tol)(t)

    # -- export ------------------------------------------------------------

    def dump_heatmap_csv(self, path, n: int = 41) -> None:
        """Write ||G(t,s)|| on an n x n grid over the mesh window."""
        ts = np.linspace(self.mesh.t_min, self.mesh.t_max, n)
        rows = ["t,s,norm"]
        for t in ts:
            for s in ts:
                try:
                    nrm = float(np.linalg.norm(self.green_global(float(t), float(s)), 2))
                except SingularFactor:
                    nrm = float("nan")
                rows.append(f"{float(t):.17g},{float(s):.17g},{nrm:.17g}")
        with open(path, "w") as fh:
            fh.write("\n".join(rows) + "\n")
