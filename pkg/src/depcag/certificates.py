"""Checkable certificates for hypotheses, stability and dichotomies.

Every certificate records the constants it computed and a verdict.  All
suprema over the bi-infinite index set are truncated to the stored mesh
window; such verdicts carry a truncation note and may be marked
inconclusive rather than silently extrapolated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from .errors import DomainError, ThetaNotLessThanOne
from .mesh import Mesh

PASS = "pass"
FAIL = "fail"
INCONCLUSIVE = "inconclusive"


@dataclass
class Certificate:
    name: str
    inputs: dict
    computed: dict
    verdict: str
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.verdict == PASS

    def report(self) -> str:
        lines = [f"certificate: {self.name}", f"verdict: {self.verdict}"]
        for k, v in self.inputs.items():
            lines.append(f"input {k}: {v}")
        for k, v in self.computed.items():
            if isinstance(v, float):
                lines.append(f"{k}: {v:.12g}")
            else:
                lines.append(f"{k}: {v}")
        for n in self.notes:
            lines.append(f"note: {n}")
        return "\n".join(lines)


def _norm_integral(coeff, lo: float, hi: float) -> float:
    """Integral of the spectral norm of a matrix coefficient over [lo, hi]."""
    if hi <= lo:
        return 0.0
    if coeff.is_constant:
        return float(np.linalg.norm(coeff.matrix, 2)) * (hi - lo)
    val, _ = quad(lambda s: np.linalg.norm(coeff(s), 2), lo, hi, limit=200)
    return float(val)


# -- hypothesis checkers --------------------------------------------------

def check_h2(system) -> Certificate:
    """Growth-smallness check: per-interval exponential weights of A and the
    advanced/delayed B integrals must stay below one."""
    mesh: Mesh = system.mesh
    rho_plus = np.empty(mesh.n_intervals)
    rho_minus = np.empty(mesh.n_intervals)
    nu_plus = np.empty(mesh.n_intervals)
    nu_minus = np.empty(mesh.n_intervals)
    for pos in range(mesh.n_intervals):
        i = pos + mesh.index_offset
        (t_i, z_i), (_, t_next) = mesh.split(i)
        ia_plus = _norm_integral(system.A, t_i, z_i)
        ia_minus = _norm_integral(system.A, z_i, t_next)
        ib_plus = _norm_integral(system.B, t_i, z_i)
        ib_minus = _norm_integral(system.B, z_i, t_next)
        rho_plus[pos] = math.exp(ia_plus)
        rho_minus[pos] = math.exp(ia_minus)
        # rho^±(A) * ln(rho^±(B)) with ln(rho(B)) = integral of |B|
        nu_plus[pos] = rho_plus[pos] * ib_plus
        nu_minus[pos] = rho_minus[pos] * ib_minus
    rho_a = float(np.max(rho_plus * rho_minus))
    nup = float(nu_plus.max())
    num = float(nu_minus.max())
    verdict = PASS if (nup < 1.0 and num < 1.0) else FAIL
    return Certificate(
        "h2", {"window": (mesh.t_min, mesh.t_max)},
        {"rho_A": rho_a, "nu_plus": nup, "nu_minus": num,
         "rho_A_plus_max": float(rho_plus.max()), "rho_A_minus_max": float(rho_minus.max())},
        verdict,
        ["sup over intervals truncated to the stored window"],
    )


def check_s_conditions(system, cauchy) -> Certificate:
    """Sampled boundedness of Z(t, t_{i(t)}), minimum knot gap, and the
    largest advanced/delayed half-length."""
    mesh: Mesh = system.mesh
    s1 = 0.0
    for pos in range(mesh.n_intervals):
        t_i = float(mesh.knots[pos])
        t_next = float(mesh.knots[pos + 1])
        for t in np.linspace(t_i, t_next, 9):
            s1 = max(s1, float(np.linalg.norm(cauchy.z(float(t), t_i), 2)))
    s2 = mesh.min_gap()
    s3 = mesh.tbar()
    verdict = PASS if (np.isfinite(s1) and s2 > 0 and np.isfinite(s3)) else FAIL
    return Certificate(
        "s_conditions", {"window": (mesh.t_min, mesh.t_max)},
        {"sup_Z_interval": s1, "min_gap": s2, "tbar": s3},
        verdict,
        ["finite-window surrogate of inf/sup over all intervals"],
    )


# -- Gronwall -------------------------------------------------------------

def _eta_integral(eta, lo: float, hi: float) -> float:
    if hi <= lo:
        return 0.0
    val, _ = quad(eta, lo, hi, limit=200)
    return float(val)


def gronwall_bound(eta, mesh: Mesh, tau: float, t: float, u_tau: float,
                   side: str = "full") -> tuple[float, float]:
    """Smallness constant theta and the bound u(tau)*exp(theta_tilde * int eta).

    side selects which sub-intervals enter theta: the whole interval, the
    advanced parts only (forward estimates, t >= tau) or the delayed parts
    only (backward estimates).
    """
    if side not in ("full", "forward", "backward"):
        raise DomainError(f"unknown side '{side}'")
    theta = 0.0
    for pos in range(mesh.n_intervals):
        i = pos + mesh.index_offset
        (t_i, z_i), (_, t_next) = mesh.split(i)
        if side == "full":
            part = _eta_integral(eta, t_i, t_next)
        elif side == "forward":
            part = _eta_integral(eta, t_i, z_i)
        else:
            part = _eta_integral(eta, z_i, t_next)
        theta = max(theta, 2.0 * part)
    if theta >= 1.0:
        raise ThetaNotLessThanOne(f"theta={theta} >= 1")
    theta_tilde = (2.0 - theta) / (1.0 - theta)
    total = _eta_integral(eta, min(tau, t), max(tau, t))
    return theta, u_tau * math.exp(theta_tilde * total)


# -- stability ------------------------------------------------------------

def check_exponential_stability_discrete(cauchy) -> Certificate:
    """Pass when every knot-to-knot transition matrix has norm below one."""
    factors = cauchy.monodromy_factors()
    norms = [float(np.linalg.norm(F, 2)) for F in factors]
    spec = [float(np.max(np.abs(np.linalg.eigvals(F)))) for F in factors]
    rho = max(norms)
    verdict = PASS if rho < 1.0 else FAIL
    return Certificate(
        "exponential_stability_discrete", {"n_factors": len(factors)},
        {"rho": rho, "max_spectral_radius": max(spec),
         "min_spectral_radius": min(spec)},
        verdict,
        ["rho is the max transition-factor norm over the stored window"],
    )


def sigma0_perturbed(cert_linear: Certificate, eta_profile, mesh: Mesh) -> Certificate:
    """Decay rate surviving a Lipschitz perturbation with weight eta.

    cert_linear must provide computed constants c, sigma and rho_A.
    """
    c = float(cert_linear.computed["c"])
    sigma = float(cert_linear.computed["sigma"])
    rho_a = float(cert_linear.computed["rho_A"])
    tbar = mesh.tbar()
    theta = 0.0
    for pos in range(mesh.n_intervals):
        i = pos + mesh.index_offset
        (t_i, z_i), _ = mesh.split(i)
        theta = max(theta, 2.0 * c * math.exp(sigma * tbar) * rho_a
                    * _eta_integral(eta_profile, t_i, z_i))
    # trailing-half surrogate of limsup (1/t) * int_0^t eta
    t0 = mesh.t_min
    betas = []
    for t in mesh.knots[mesh.n_intervals // 2:]:
        if t > t0:
            betas.append(_eta_integral(eta_profile, t0, float(t)) / (float(t) - t0))
    beta = max(betas) if betas else 0.0
    if theta < 1.0:
        mu = (2.0 - theta) / (1.0 - theta)
        sigma0 = sigma - beta * mu * c * rho_a * math.exp(2.0 * sigma * tbar)
        verdict = PASS if sigma0 > 0 else FAIL
    else:
        mu = math.inf
        sigma0 = -math.inf
        verdict = FAIL
    return Certificate(
        "sigma0_perturbed", {"c": c, "sigma": sigma, "rho_A": rho_a, "tbar": tbar},
        {"theta": theta, "beta": beta, "mu": mu, "sigma0": sigma0},
        verdict,
        ["beta is a trailing-window surrogate of the limsup",
         f"window ({mesh.t_min}, {mesh.t_max})"],
    )


# -- scalar constant-coefficient closed forms -----------------------------

def lambda_scalar(s: float, a: float, b: float) -> float:
    """Closed-form interval factor for constant scalar coefficients.

    Evaluated as 1 + expm1(s a)(a + b)/a, which is algebraically identical to
    e^{sa} + (e^{sa} - 1) b/a but free of cancellation near b = -a, where the
    factor sits on the stability boundary."""
    if a == 0.0:
        return 1.0 + s * b
    return 1.0 + math.expm1(s * a) * (a + b) / a


def lambda1_scalar(a: float, b: float, nu_plus: float, nu_minus: float) -> float:
    denom = lambda_scalar(-nu_plus, a, b)
    if denom == 0.0:
        raise DomainError("interval factor singular: Lambda(-nu_plus) = 0")
    return lambda_scalar(nu_minus, a, b) / denom


def scalar_example_certificate(a: float, b: float, nu_plus: float,
                               nu_minus: float) -> Certificate:
    """Scalar stability inequality vs the directly computed interval factor.

    The sufficient inequality [e^{a nu-} + e^{-a nu+}][1 + b/a] > 2b/a applies
    when -b > a > 0 or when -b > a with a < 0.  Both the inequality verdict
    and the direct |Lambda1| < 1 verdict are reported so that a disagreement
    would surface.
    """
    if a == 0.0 or not (-b > a):
        raise DomainError(f"sign pattern -b > a with a != 0 required, got a={a}, b={b}")
    condition = "a" if a > 0 else "b"
    lhs = (math.exp(a * nu_minus) + math.exp(-a * nu_plus)) * (1.0 + b / a)
    rhs = 2.0 * b / a
    inequality_holds = lhs > rhs
    lam1 = abs(lambda1_scalar(a, b, nu_plus, nu_minus))
    computed = {"condition": condition, "lhs": lhs, "rhs": rhs,
                "inequality_holds": inequality_holds,
                "abs_lambda1": lam1, "lambda1_lt_1": lam1 < 1.0}
    notes = []
    if nu_plus == 0.0:
        spec_rhs = (b - a) / (b + a) if b + a != 0 else math.inf
        computed["delayed_lhs"] = math.exp(a * nu_minus)
        computed["delayed_rhs"] = spec_rhs
        computed["delayed_holds"] = math.exp(a * nu_minus) < spec_rhs
        notes.append("completely delayed specialization reported")
    verdict = PASS if inequality_holds else FAIL
    if inequality_holds and lam1 >= 1.0:
        verdict = FAIL
        notes.append("inequality passed but |Lambda1| >= 1: sufficiency violated")
    return Certificate(
        "scalar_example",
        {"a": a, "b": b, "nu_plus": nu_plus, "nu_minus": nu_minus},
        computed, verdict, notes,
    )


# -- dichotomies ----------------------------------------------------------

def _check_projection(P: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    P = np.atleast_2d(np.asarray(P, dtype=float))
    if np.linalg.norm(P @ P - P, 2) > tol * max(1.0, np.linalg.norm(P, 2)):
        raise DomainError("P is not idempotent")
    return P


def _zp_base(cauchy) -> float:
    mesh = cauchy.mesh
    return 0.0 if mesh.t_min <= 0.0 <= mesh.t_max else mesh.t_min


def _zp_value(cauchy, P: np.ndarray, base: float, t: float, s: float) -> np.ndarray:
    zt = cauchy.z(t, base)
    zs = cauchy.z(base, s)
    if t >= s:
        return zt @ P @ zs
    return -zt @ (np.eye(P.shape[0]) - P) @ zs


def _sample_pairs(mesh: Mesh, n_pairs: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    pts = np.unique(np.concatenate(
        [mesh.knots, mesh.anchors, (mesh.knots[:-1] + mesh.knots[1:]) / 2.0]))
    ti = rng.integers(0, pts.size, size=n_pairs)
    si = rng.integers(0, pts.size, size=n_pairs)
    return np.column_stack([pts[ti], pts[si]])


def check_ordinary_dichotomy(cauchy, P, c_max: float = 100.0,
                             n_pairs: int = 400, seed: int = 0,
                             knots_only: bool = False) -> Certificate:
    """Sampled uniform bound on the projected kernel in both time directions.

    With knots_only=True the bound is taken over all knot pairs, certifying
    the induced difference system on the mesh rather than the flow between
    knots."""
    P = _check_projection(P)
    base = _zp_base(cauchy)
    if knots_only:
        knots = cauchy.mesh.knots
        pairs = [(float(t), float(s)) for t in knots for s in knots]
    else:
        pairs = _sample_pairs(cauchy.mesh, n_pairs, seed)
    cmax = 0.0
    for t, s in pairs:
        cmax = max(cmax, float(np.linalg.norm(_zp_value(cauchy, P, base, t, s), 2)))
    verdict = PASS if cmax <= c_max else FAIL
    return Certificate(
        "ordinary_dichotomy_discrete" if knots_only else "ordinary_dichotomy",
        {"base_point": base, "c_max": c_max,
         "n_pairs": len(pairs) if knots_only else n_pairs},
        {"c": cmax},
        verdict,
        ["bound sampled on the finite window; pass threshold is a heuristic"],
    )


def _trimmed_fit(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Least-squares slope/intercept with one pass of outlier trimming."""
    A = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    keep = np.abs(resid) <= 2.0 * max(np.std(resid), 1e-300)
    if keep.sum() >= 3 and keep.sum() < keep.size:
        coef, *_ = np.linalg.lstsq(A[keep], y[keep], rcond=None)
    return float(coef[0]), float(coef[1])


def check_exponential_dichotomy(cauchy, P, sigma_min: float = 0.05,
                                n_pairs: int = 400, seed: int = 0) -> Certificate:
    """Fit of log norm of the projected kernel against |t - s| in both
    directions; pass when both slopes certify decay at rate >= sigma_min."""
    P = _check_projection(P)
    base = _zp_base(cauchy)
    fwd_x, fwd_y, bwd_x, bwd_y = [], [], [], []
    for t, s in _sample_pairs(cauchy.mesh, n_pairs, seed):
        if abs(t - s) < 1e-12:
            continue
        nrm = float(np.linalg.norm(_zp_value(cauchy, P, base, t, s), 2))
        if nrm <= 0.0:
            continue
        if t >= s:
            fwd_x.append(t - s); fwd_y.append(math.log(nrm))
        else:
            bwd_x.append(s - t); bwd_y.append(math.log(nrm))
    if len(fwd_x) < 3 or len(bwd_x) < 3:
        return Certificate("exponential_dichotomy", {"sigma_min": sigma_min},
                           {}, INCONCLUSIVE, ["not enough usable samples"])
    slope_f, icept_f = _trimmed_fit(np.array(fwd_x), np.array(fwd_y))
    slope_b, icept_b = _trimmed_fit(np.array(bwd_x), np.array(bwd_y))
    sigma = min(-slope_f, -slope_b)
    c = math.exp(max(icept_f, icept_b))
    # worst sampled excess over the fitted envelope, for the downstream bound
    excess = 0.0
    for x, y in ((np.array(fwd_x), np.array(fwd_y)), (np.array(bwd_x), np.array(bwd_y))):
        excess = max(excess, float(np.max(y + sigma * x)))
    c_env = math.exp(excess)
    verdict = PASS if sigma >= sigma_min else FAIL
    return Certificate(
        "exponential_dichotomy",
        {"base_point": base, "sigma_min": sigma_min, "n_pairs": n_pairs},
        {"c": max(c, c_env), "sigma": sigma,
         "slope_forward": slope_f, "slope_backward": slope_b},
        verdict,
        ["rates fitted on the finite window, not proved"],
    )


# -- series convergence ---------------------------------------------------

def check_series(cauchy, flow, which: str, P=None, ratio_tol: float = 0.01) -> Certificate:
    """Geometric-decay check of the knot-sum terms behind the bounded-solution
    series, in the requested time direction, optionally projected."""
    if which not in ("serie_minus", "serie_plus", "serie_P_minus", "serie_P_plus"):
        raise DomainError(f"unknown series '{which}'")
    mesh = cauchy.mesh
    base = _zp_base(cauchy)
    use_p = which.startswith("serie_P")
    if use_p:
        if P is None:
            raise DomainError("projected series needs P")
        P = _check_projection(P)
    forward = which.endswith("plus")
    i_base = mesh.position(base)
    terms = []
    positions = (range(i_base, mesh.n_intervals) if forward
                 else range(i_base - 1, -1, -1))
    for pos in positions:
        t_k = float(mesh.knots[pos])
        t_next = float(mesh.knots[pos + 1])
        Zb = cauchy.z(base, t_next)
        if use_p:
            Zb = (P @ Zb) if not forward else ((np.eye(P.shape[0]) - P) @ Zb)
        phi_int, _ = quad(lambda s: np.linalg.norm(flow.phi(t_next, s), 2),
                          t_k, t_next, limit=200)
        terms.append(float(np.linalg.norm(Zb, 2)) * float(phi_int))
    terms = np.array(terms)
    partial = float(terms.sum())
    pos_terms = terms[terms > 0]
    if pos_terms.size < 3:
        return Certificate(f"series_{which}", {"n_terms": len(terms)},
                           {"partial_sum": partial}, INCONCLUSIVE,
                           ["too few nonzero terms for a ratio fit"])
    k = np.arange(pos_terms.size, dtype=float)
    slope, _ = _trimmed_fit(k, np.log(pos_terms))
    ratio = math.exp(slope)
    if ratio < 1.0 - ratio_tol:
        verdict = PASS
        tail = pos_terms[-1] * ratio / (1.0 - ratio)
    elif ratio > 1.0 + ratio_tol:
        verdict = FAIL
        tail = math.inf
    else:
        verdict = INCONCLUSIVE
        tail = math.inf
    return Certificate(
        f"series_{which}", {"base_point": base, "n_terms": len(terms)},
        {"partial_sum": partial, "fitted_ratio": ratio, "tail_bound": tail},
        verdict,
        ["sum truncated to the stored window"],
    )
