import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import depcag as dp
from depcag import certificates as cert
from depcag.errors import DomainError, ThetaNotLessThanOne
from depcag.solvers import DepcagSystem


def _system(a_mat, b_mat, mesh, **kw):
    return DepcagSystem(dp.constant(a_mat), dp.constant(b_mat), mesh, **kw)


# -- scalar closed forms ----------------------------------------------------

@given(st.floats(min_value=-2.0, max_value=2.0),
       st.floats(min_value=-2.0, max_value=2.0),
       st.floats(min_value=-1.0, max_value=1.0))
@settings(max_examples=100, deadline=None)
def test_lambda_scalar_matches_naive_formula(a, b, s):
    got = cert.lambda_scalar(s, a, b)
    if a == 0.0:
        assert got == 1.0 + s * b
    elif abs(a) < 1e-6:
        # both formulas degrade below this scale; nothing to compare
        if abs(a) < 1e-12:
            return
        # the naive formula loses digits here; compare to the a -> 0 limit
        assert got == pytest.approx(1.0 + s * b, abs=1e-5)
    else:
        naive = math.exp(s * a) + (math.exp(s * a) - 1.0) * b / a
        assert got == pytest.approx(naive, rel=1e-10, abs=1e-10)


def test_lambda1_frozen_value():
    # a=1, b=-2, nu+=nu-=1: Lambda(1) = 2 - e, Lambda(-1) = 2 - 1/e
    got = cert.lambda1_scalar(1.0, -2.0, 1.0, 1.0)
    ref = (2.0 - math.e) / (2.0 - 1.0 / math.e)
    assert got == pytest.approx(ref, rel=1e-14)
    assert got == pytest.approx(-0.44009115906, abs=1e-11)


def test_lambda1_singular_denominator():
    # Lambda(-nu+) = 1 - nu+ b = 0 at b = 2 with nu+ = 0.5
    with pytest.raises(DomainError):
        cert.lambda1_scalar(0.0, 2.0, 0.5, 1.0)


def test_scalar_example_requires_sign_pattern():
    with pytest.raises(DomainError):
        cert.scalar_example_certificate(0.0, -1.0, 1.0, 1.0)
    with pytest.raises(DomainError):
        cert.scalar_example_certificate(1.0, -1.0, 1.0, 1.0)
    with pytest.raises(DomainError):
        cert.scalar_example_certificate(1.0, 2.0, 1.0, 1.0)


def test_scalar_example_pass_and_fail():
    ok = cert.scalar_example_certificate(1.0, -2.0, 1.0, 1.0)
    assert ok.passed
    assert ok.computed["condition"] == "a"
    assert ok.computed["lambda1_lt_1"]
    bad = cert.scalar_example_certificate(1.05, -3.0, 1.0, 1.0)
    assert not bad.passed
    assert not bad.computed["inequality_holds"]
    assert bad.computed["abs_lambda1"] > 1.0


def test_scalar_example_completely_delayed_specialization():
    c = cert.scalar_example_certificate(0.5, -2.0, 0.0, 1.0)
    assert "delayed_holds" in c.computed
    # e^{a nu-} < (b-a)/(b+a)
    assert c.computed["delayed_rhs"] == pytest.approx((-2.0 - 0.5) / (-2.0 + 0.5))


@given(st.floats(min_value=-2.5, max_value=2.5),
       st.floats(min_value=-2.9, max_value=0.0),
       st.floats(min_value=0.1, max_value=1.0),
       st.floats(min_value=0.1, max_value=1.0))
@settings(max_examples=300, deadline=None)
def test_scalar_inequality_is_sufficient(a, b, nu_plus, nu_minus):
    # the claimed sufficiency: inequality pass implies |Lambda1| < 1;
    # a margin of a few ulps keeps boundary cases resolvable in doubles
    if abs(a) < 1e-9 or not (-b > a + 1e-9):
        return
    try:
        c = cert.scalar_example_certificate(a, b, nu_plus, nu_minus)
    except DomainError:
        return
    if c.computed["inequality_holds"]:
        assert c.computed["abs_lambda1"] < 1.0


# -- hypothesis-style checkers ---------------------------------------------

def test_check_h2_pass_and_fail():
    mesh = dp.Mesh.uniform(0.5, 0.5, 0.0, 6)
    small = _system(-0.5 * np.eye(2), 0.1 * np.eye(2), mesh)
    assert cert.check_h2(small).passed
    big = _system(-0.5 * np.eye(2), 2.0 * np.eye(2), mesh)
    c = cert.check_h2(big)
    assert not c.passed
    assert c.computed["nu_plus"] > 1.0


def test_check_s_conditions(hyperbolic_system):
    c = cert.check_s_conditions(hyperbolic_system, hyperbolic_system.cauchy())
    assert c.passed
    assert c.computed["min_gap"] == 1.0
    assert c.computed["tbar"] == 0.5


def test_gronwall_bound_basic():
    mesh = dp.Mesh.uniform(0.5, 0.5, 0.0, 6)
    eta = lambda t: 0.2
    theta, bound = cert.gronwall_bound(eta, mesh, 0.0, 3.0, 1.0)
    assert theta == pytest.approx(0.4, rel=1e-9)
    # bound = u * exp(theta_tilde * int eta), theta_tilde = (2-0.4)/(1-0.4)
    assert bound == pytest.approx(math.exp((1.6 / 0.6) * 0.6), rel=1e-9)


def test_gronwall_bound_sides_and_errors():
    mesh = dp.Mesh.uniform(0.25, 0.75, 0.0, 6)
    eta = lambda t: 0.4
    th_fwd, _ = cert.gronwall_bound(eta, mesh, 0.0, 2.0, 1.0, side="forward")
    th_bwd, _ = cert.gronwall_bound(eta, mesh, 0.0, 2.0, 1.0, side="backward")
    assert th_fwd == pytest.approx(2 * 0.4 * 0.25, rel=1e-9)
    assert th_bwd == pytest.approx(2 * 0.4 * 0.75, rel=1e-9)
    with pytest.raises(DomainError):
        cert.gronwall_bound(eta, mesh, 0.0, 2.0, 1.0, side="sideways")
    with pytest.raises(ThetaNotLessThanOne):
        cert.gronwall_bound(lambda t: 0.6, mesh, 0.0, 2.0, 1.0)


def test_discrete_stability_pass_fail():
    mesh = dp.Mesh.uniform(0.5, 0.5, 0.0, 8)
    stable = _system(np.diag([-1.0, -0.5]), np.zeros((2, 2)), mesh)
    assert cert.check_exponential_stability_discrete(stable.cauchy()).passed
    unstable = _system(np.diag([1.0, -0.5]), np.zeros((2, 2)), mesh)
    c = cert.check_exponential_stability_discrete(unstable.cauchy())
    assert not c.passed
    assert c.computed["rho"] > 1.0


def test_discrete_stability_implies_positive_decay_fit():
    # cross-module coherence: the discrete certificate passing means the
    # fitted decay rate is positive
    mesh = dp.Mesh.cooke_wiener(0, 12)
    system = _system([[1.0]], [[-2.0]], mesh)
    cauchy = system.cauchy()
    assert cert.check_exponential_stability_discrete(cauchy).passed
    _, sigma, _ = cauchy.estimate_decay(mesh.t_min, mesh.t_max - mesh.t_min)
    assert sigma > 0.0


def test_sigma0_perturbed_pass_and_fail():
    mesh = dp.Mesh.cooke_wiener(0, 12)
    linear = cert.Certificate("linear_decay", {},
                              {"c": 1.2, "sigma": 0.4, "rho_A": 3.0},
                              cert.PASS, [])
    ok = cert.sigma0_perturbed(linear, lambda t: 1e-4, mesh)
    assert ok.passed
    assert 0.0 < ok.computed["sigma0"] <= 0.4
    bad = cert.sigma0_perturbed(linear, lambda t: 0.5, mesh)
    assert not bad.passed


# -- dichotomies ------------------------------------------------------------

@pytest.fixture
def uncoupled():
    mesh = dp.Mesh.uniform(0.5, 0.5, 0.0, 12)
    return _system(np.diag([-1.0, 1.0]), np.zeros((2, 2)), mesh)


def test_ordinary_dichotomy_pass(uncoupled):
    P = np.diag([1.0, 0.0])
    c = cert.check_ordinary_dichotomy(uncoupled.cauchy(), P)
    assert c.passed
    assert c.computed["c"] < 2.0


def test_ordinary_dichotomy_wrong_projection_fails(uncoupled):
    # P = I leaves the unstable direction in the forward part
    c = cert.check_ordinary_dichotomy(uncoupled.cauchy(), np.eye(2))
    assert not c.passed


def test_exponential_dichotomy_rate(uncoupled):
    P = np.diag([1.0, 0.0])
    c = cert.check_exponential_dichotomy(uncoupled.cauchy(), P)
    assert c.passed
    assert c.computed["sigma"] == pytest.approx(1.0, abs=0.05)


def test_projection_validated():
    mesh = dp.Mesh.uniform(0.5, 0.5, 0.0, 6)
    system = _system(np.diag([-1.0, 1.0]), np.zeros((2, 2)), mesh)
    with pytest.raises(DomainError):
        cert.check_ordinary_dichotomy(system.cauchy(),
                                      np.array([[1.0, 0.0], [1.0, 1.0]]))


def test_series_certificates():
    # window centered on the base point so both directions have terms;
    # B != 0 keeps the series terms nonzero
    mesh = dp.Mesh.uniform(0.5, 0.5, 0.0, 12, i_min=-6)
    system = _system(np.diag([-1.0, 1.0]), [[0.0, 0.1], [0.05, 0.0]], mesh)
    cauchy, flow = system.cauchy(), system.flow()
    P = dp.spectral_projection(cauchy.monodromy_factors()[0])
    minus = cert.check_series(cauchy, flow, "serie_P_minus", P=P)
    plus = cert.check_series(cauchy, flow, "serie_P_plus", P=P)
    assert minus.passed and plus.passed
    with pytest.raises(DomainError):
        cert.check_series(cauchy, flow, "serie_sideways")


def test_certificate_report_format():
    c = cert.scalar_example_certificate(1.0, -2.0, 1.0, 1.0)
    text = c.report()
    assert text.splitlines()[0] == "certificate: scalar_example"
    assert "verdict: pass" in text
    assert any(line.startswith("input a:") for line in text.splitlines())
