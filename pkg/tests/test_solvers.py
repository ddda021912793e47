import numpy as np
import pytest

import depcag as dp
from depcag.errors import TailNotConvergent, XiNotInRange
from depcag.green import GreenKernel
from depcag.solvers import (DepcagSystem, bounded_solution_backward,
                            bounded_solution_dichotomy,
                            bounded_solution_forward, equivalence_inverse,
                            equivalence_map, nonlinear_bounded,
                            oracle_integrate, solve_b_only, solve_linear,
                            solve_linear_wiener, solve_quasilinear,
                            trajectory_residual)

from conftest import random_constant_system


def test_unforced_solution_is_propagation(hyperbolic_system):
    system = DepcagSystem(hyperbolic_system.A, hyperbolic_system.B,
                          hyperbolic_system.mesh)
    cauchy = system.cauchy()
    xi = np.array([0.3, -0.8])
    traj = solve_linear(system, 0.0, xi, 5.0)
    for t in (0.7, 2.2, 4.9):
        np.testing.assert_allclose(traj(t), cauchy.propagate(0.0, xi, t),
                                   atol=1e-10)


def test_split_and_block_assemblies_agree():
    rng = np.random.default_rng(7)
    for _ in range(5):
        system = random_constant_system(rng)
        xi = rng.standard_normal(system.dimension)
        t_end = float(system.mesh.knots[6])
        a = solve_linear(system, 0.0, xi, t_end)
        b = solve_linear_wiener(system, 0.0, xi, t_end)
        for t in np.linspace(0.1, t_end - 0.1, 9):
            assert np.linalg.norm(a(float(t)) - b(float(t))) < 1e-9 * (
                1.0 + np.linalg.norm(a(float(t))))


def test_linear_solver_against_oracle():
    rng = np.random.default_rng(42)
    for _ in range(5):
        system = random_constant_system(rng)
        xi = rng.standard_normal(system.dimension)
        t_end = float(system.mesh.knots[8])
        got = solve_linear(system, 0.0, xi, t_end)
        ref = oracle_integrate(system, 0.0, xi, t_end)
        for t in system.mesh.knots[1:9]:
            err = np.linalg.norm(got(float(t)) - ref(float(t)))
            assert err <= 1e-9 * (1.0 + np.linalg.norm(ref(float(t))))


def test_backward_solve_round_trips(hyperbolic_system):
    system = hyperbolic_system
    xi = np.array([1.0, 0.2])
    fwd = solve_linear(system, 1.3, xi, 4.8)
    back = solve_linear(system, 4.8, fwd(4.8), 1.3)
    np.testing.assert_allclose(back(1.3), xi, atol=1e-8)
    np.testing.assert_allclose(back(2.6), fwd(2.6), atol=1e-8)


def test_mid_interval_start_against_oracle(hyperbolic_system):
    system = hyperbolic_system
    tau, xi = 1.7, np.array([-0.4, 0.9])
    got = solve_linear(system, tau, xi, 5.2)
    ref = oracle_integrate(system, tau, xi, 5.2)
    for t in (2.3, 3.5, 5.2):
        assert np.linalg.norm(got(t) - ref(t)) < 1e-8


def test_b_only_specialization():
    mesh = dp.Mesh.uniform(0.5, 0.5, 0.0, 8)
    system = DepcagSystem(dp.zero(2), dp.constant([[0.0, 0.4], [-0.3, 0.0]]),
                          mesh, g=lambda t: np.array([np.cos(t), 0.0]))
    xi = np.array([1.0, -1.0])
    got = solve_b_only(system, 0.0, xi, 4.0)
    ref = oracle_integrate(system, 0.0, xi, 4.0)
    for t in (1.0, 2.5, 4.0):
        assert np.linalg.norm(got(t) - ref(t)) < 1e-9
    with pytest.raises(ValueError):
        solve_b_only(DepcagSystem(dp.constant(np.eye(2)), dp.zero(2), mesh),
                     0.0, xi, 4.0)


def test_quasilinear_against_oracle(stable_scalar_cw):
    system = DepcagSystem(stable_scalar_cw.A, stable_scalar_cw.B,
                          stable_scalar_cw.mesh,
                          f=dp.perturbation_preset("tanh", 1e-3),
                          eta=dp.eta_preset("constant", 1e-3))
    tau, xi = float(system.mesh.t_min), np.array([1.0])
    got = solve_quasilinear(system, tau, xi, tau + 10.0)
    ref = oracle_integrate(system, tau, xi, tau + 10.0)
    for t in np.linspace(tau + 0.5, tau + 9.5, 10):
        assert abs(got(float(t))[0] - ref(float(t))[0]) < 1e-8
    assert got.meta["contraction_constant"] < 1.0


def test_quasilinear_reduces_to_linear(hyperbolic_system):
    system = DepcagSystem(hyperbolic_system.A, hyperbolic_system.B,
                          hyperbolic_system.mesh, g=hyperbolic_system.g,
                          f=lambda t, x, y: np.zeros(2),
                          eta=lambda t: 0.0)
    xi = np.array([0.5, 0.1])
    lin = solve_linear(system, 0.0, xi, 4.0)
    qua = solve_quasilinear(system, 0.0, xi, 4.0)
    for t in (1.1, 2.7, 4.0):
        np.testing.assert_allclose(qua(t), lin(t), atol=1e-8)


def test_trajectory_csv_round_trip(tmp_path, hyperbolic_system):
    traj = solve_linear(hyperbolic_system, 0.0, [1.0, 0.0], 2.0)
    path = tmp_path / "traj.csv"
    traj.to_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "t,x_1,x_2,flag"
    # 17 significant digits survive a parse round trip bit-exactly
    t0, x1, x2, flag = lines[1].split(",")
    assert flag == "knot"
    assert float(x1) == traj.states[0, 0]
    anchors = [ln for ln in lines if ln.endswith("anchor")]
    assert anchors


def test_bounded_solution_forward_stable():
    mesh = dp.Mesh.uniform(0.5, 0.5, 0.0, 60)
    B = dp.constant(0.05 * np.array([[0.0, 1.0], [1.0, 0.0]]))
    system = DepcagSystem(dp.constant(-np.eye(2)), B, mesh,
                          g=dp.forcing_preset("sin_vector", 2))
    kern = GreenKernel(system.cauchy())
    traj = bounded_solution_forward(system, kern, tol=1e-8, t_start=24.0)
    sel = (traj.times >= 25.0) & (traj.times <= 29.0)
    sub = dp.Trajectory(traj.times[sel], traj.states[sel], traj.dense,
                        mesh, traj.meta)
    assert trajectory_residual(system, sub, n_samples=40, h=1e-4) < 2e-4
    assert traj.sup_norm < 5.0


def test_bounded_solution_forward_window_guard():
    mesh = dp.Mesh.uniform(0.5, 0.5, 0.0, 8)
    system = DepcagSystem(dp.constant(-np.eye(2)), dp.zero(2), mesh,
                          g=dp.forcing_preset("sin_vector", 2))
    kern = GreenKernel(system.cauchy())
    with pytest.raises(TailNotConvergent):
        bounded_solution_forward(system, kern, decay=(1.0, 1.0), tol=1e-12,
                                 t_start=1.0)


def test_bounded_solution_backward_mirrors_forward():
    # reverse-stable system: decay accumulates from the future
    mesh = dp.Mesh.uniform(0.5, 0.5, 0.0, 60)
    system = DepcagSystem(dp.constant(np.eye(2)), dp.zero(2), mesh,
                          g=dp.forcing_preset("sin_vector", 2))
    kern = GreenKernel(system.cauchy())
    traj = bounded_solution_backward(system, kern, tol=1e-8, t_end=6.0)
    sel = (traj.times >= 1.0) & (traj.times <= 5.0)
    sub = dp.Trajectory(traj.times[sel], traj.states[sel], traj.dense,
                        mesh, traj.meta)
    assert trajectory_residual(system, sub, n_samples=40, h=1e-4) < 2e-4
    assert max(np.linalg.norm(traj.dense(t)) for t in np.linspace(1, 5, 21)) < 5.0


def test_bounded_solution_dichotomy_solves_equation(hyperbolic_system):
    kern = GreenKernel.with_default_projection(hyperbolic_system.cauchy())
    traj = bounded_solution_dichotomy(hyperbolic_system, kern)
    tau = float(traj.times[len(traj.times) // 2])
    prop = solve_linear(hyperbolic_system, tau, traj(tau),
                        float(traj.times[-1]))
    for t in np.linspace(tau, float(traj.times[-1]), 7):
        assert np.linalg.norm(prop(float(t)) - traj(float(t))) < 1e-8


def test_equivalence_zero_perturbation_is_identity(hyperbolic_system):
    system = DepcagSystem(hyperbolic_system.A, hyperbolic_system.B,
                          hyperbolic_system.mesh, g=hyperbolic_system.g,
                          f=lambda t, x, y: np.zeros(2),
                          eta=lambda t: 0.0)
    lin = DepcagSystem(system.A, system.B, system.mesh, g=system.g)
    kern = GreenKernel.with_default_projection(lin.cauchy())
    y = bounded_solution_dichotomy(lin, kern)
    v = equivalence_map(lin, system, y, kern, float(y.times[0]))
    # compare on v's own sample grid; y's grid differs and would only
    # measure interpolation error
    gaps = [np.linalg.norm(x - y(float(t))) for t, x in zip(v.times, v.states)]
    assert max(gaps) < 1e-12
    assert v.meta["beta"] == 0.0


def test_equivalence_round_trip(hyperbolic_system):
    eta = dp.eta_preset("decaying_exp", 0.05)
    system = DepcagSystem(hyperbolic_system.A, hyperbolic_system.B,
                          hyperbolic_system.mesh, g=hyperbolic_system.g,
                          f=lambda t, x, y: eta(t) * np.tanh(x), eta=eta)
    lin = DepcagSystem(system.A, system.B, system.mesh, g=system.g)
    kern = GreenKernel.with_default_projection(lin.cauchy())
    y = bounded_solution_dichotomy(lin, kern)
    t0 = float(y.times[0])
    v = equivalence_map(lin, system, y, kern, t0)
    assert v.meta["beta"] < 1.0
    y_back = equivalence_inverse(system, v, kern, t0)
    # the fixed point is exact on its own grid; off-grid deviation is the
    # cubic interpolant's, not the correspondence's
    gap = max(np.linalg.norm(y_back(float(t)) - y(float(t)))
              for t in v.times if y.times[0] <= t <= y.times[-1])
    assert gap < 1e-12


def test_nonlinear_bounded_xi_must_be_in_range(hyperbolic_system):
    kern = GreenKernel.with_default_projection(hyperbolic_system.cauchy())
    system = DepcagSystem(hyperbolic_system.A, hyperbolic_system.B,
                          hyperbolic_system.mesh,
                          f=dp.perturbation_preset("tanh", 0.01),
                          eta=dp.eta_preset("constant", 0.01))
    bad = np.array([0.0, 1.0]) - kern.projection @ np.array([0.0, 1.0])
    bad = np.array([1.0, 1.0])
    with pytest.raises(XiNotInRange):
        nonlinear_bounded(system, kern, bad, 0.0, decay=(1.1, 0.9))


def test_oracle_dense_output_consistent(hyperbolic_system):
    traj = oracle_integrate(hyperbolic_system, 0.0, [1.0, -0.5], 4.0)
    # dense interpolant agrees with the stored samples
    for t, x in zip(traj.times[::5], traj.states[::5]):
        np.testing.assert_allclose(traj(float(t)), x, atol=1e-10)
    assert trajectory_residual(hyperbolic_system, traj, n_samples=50) < 1e-6
