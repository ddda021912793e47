import numpy as np
import pytest

import depcag as dp
from depcag.solvers import DepcagSystem


@pytest.fixture
def hyperbolic_system():
    """Coupled constant system with one stable and one unstable direction."""
    A = dp.constant(np.diag([-1.0, 1.0]))
    B = dp.constant([[0.0, 0.1], [0.05, 0.0]])
    mesh = dp.Mesh.uniform(0.5, 0.5, 0.0, 12)
    return DepcagSystem(A, B, mesh, g=dp.forcing_preset("sin_vector", 2))


@pytest.fixture
def stable_scalar_cw():
    """Scalar a=1, b=-2 on the alternately advanced/delayed integer mesh;
    the interval factor has modulus < 1 even though a > 0."""
    A = dp.constant([[1.0]])
    B = dp.constant([[-2.0]])
    mesh = dp.Mesh.cooke_wiener(0, 12)
    return DepcagSystem(A, B, mesh)


def random_constant_system(rng, p=None, n_intervals=10, forced=True):
    """Constant-coefficient system with spectral norms of A, B at most one
    and a uniform mesh with half-lengths in [0.25, 1]."""
    if p is None:
        p = int(rng.integers(1, 4))
    A = rng.standard_normal((p, p))
    A *= rng.uniform(0.2, 1.0) / max(np.linalg.norm(A, 2), 1e-12)
    B = rng.standard_normal((p, p))
    B *= rng.uniform(0.1, 1.0) / max(np.linalg.norm(B, 2), 1e-12)
    nu_plus = rng.uniform(0.25, 1.0)
    nu_minus = rng.uniform(0.25, 1.0)
    mesh = dp.Mesh.uniform(nu_plus, nu_minus, 0.0, n_intervals)
    g = None
    if forced:
        amp = rng.uniform(0.2, 1.5, p)
        freq = rng.uniform(0.3, 2.0, p)
        phase = rng.uniform(0.0, 2 * np.pi, p)
        g = lambda t: amp * np.sin(freq * t + phase)
    return DepcagSystem(dp.constant(A), dp.constant(B), mesh, g=g)
