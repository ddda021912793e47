"""Coefficient functions and named presets.

A ``CoefficientFunction`` wraps either a constant matrix or a callable
``t -> matrix``.  Constant coefficients unlock closed-form flow evaluation;
callables are assumed locally integrable and are evaluated pointwise.

The preset registries give names to the coefficient matrices, forcings and
perturbations used by the test systems and the CLI config format.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class CoefficientFunction:
    """Constant or time-dependent p x p matrix coefficient."""

    dimension: int
    matrix: np.ndarray | None = None             # set iff constant
    func: Callable[[float], np.ndarray] | None = None
    name: str = ""

    def __post_init__(self):
        if (self.matrix is None) == (self.func is None):
            raise ConfigError("coefficient needs exactly one of matrix / func")
        if self.matrix is not None:
            m = np.atleast_2d(np.asarray(self.matrix, dtype=float))
            if m.shape != (self.dimension, self.dimension):
                raise ConfigError(f"coefficient matrix shape {m.shape} does not match dimension {self.dimension}")
            object.__setattr__(self, "matrix", m)

    @property
    def is_constant(self) -> bool:
        return self.matrix is not None

    def __call__(self, t: float) -> np.ndarray:
        if self.matrix is not None:
            return self.matrix
        m = np.atleast_2d(np.asarray(self.func(t), dtype=float))
        if not np.all(np.isfinite(m)):
            raise ConfigError(f"coefficient '{self.name}' evaluated to non-finite entries at t={t}")
        return m

    @property
    def is_zero(self) -> bool:
        return self.matrix is not None and not np.any(self.matrix)


def constant(M, name: str = "") -> CoefficientFunction:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return CoefficientFunction(M.shape[0], matrix=M, name=name)


def zero(p: int) -> CoefficientFunction:
    return CoefficientFunction(p, matrix=np.zeros((p, p)), name="zero")


def from_callable(func: Callable[[float], np.ndarray], p: int, name: str = "") -> CoefficientFunction:
    return CoefficientFunction(p, func=func, name=name)


# -- preset registries ----------------------------------------------------

def _diag_sin(t: float) -> np.ndarray:
    lam = -2.0 / np.pi + np.sin(2.0 * np.pi * t)
    return np.diag([lam, -lam])


_MATRIX_PRESETS: dict[str, tuple[int, Callable[[float], np.ndarray]]] = {
    # alternating-sign diagonal with period-1 sine wobble; the classic
    # example where the knot difference equation has a dichotomy
    "diag_sin": (2, _diag_sin),
}


def matrix_preset(name: str) -> CoefficientFunction:
    try:
        p, func = _MATRIX_PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown matrix preset '{name}'; known: {sorted(_MATRIX_PRESETS)}") from None
    return CoefficientFunction(p, func=func, name=name)


def forcing_preset(name: str, p: int) -> Callable[[float], np.ndarray]:
    """Named bounded forcing terms g(t) -> vector of length p."""
    if name == "sin_vector":
        phases = np.arange(p, dtype=float)
        return lambda t: np.sin(t + phases)
    if name == "zero":
        z = np.zeros(p)
        return lambda t: z
    raise ConfigError(f"unknown forcing preset '{name}'")


def perturbation_preset(name: str, amplitude: float):
    """Named perturbations f(t, x, y); all satisfy f(t,0,0)=0 with Lipschitz
    weight eta(t) = amplitude."""
    if name == "tanh":
        return lambda t, x, y: amplitude * np.tanh(x)
    if name == "tanh_gamma":
        return lambda t, x, y: amplitude * np.tanh(y)
    if name == "sin":
        return lambda t, x, y: amplitude * np.sin(x)
    raise ConfigError(f"unknown perturbation preset '{name}'")


def eta_preset(name: str, amplitude: float) -> Callable[[float], float]:
    """Named Lipschitz weight profiles."""
    if name == "constant":
        return lambda t: amplitude
    if name == "decaying_exp":
        return lambda t: amplitude * np.exp(-t)
    raise ConfigError(f"unknown eta preset '{name}'")
