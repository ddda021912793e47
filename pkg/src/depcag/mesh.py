"""General step-function meshes.

A mesh is a finite window of knots ``t_i`` (strictly increasing) together
with one anchor ``zeta_i`` per interval ``I_i = [t_i, t_{i+1})`` satisfying
``t_i <= zeta_i <= t_{i+1}``.  The step function is ``gamma(t) = zeta_{i(t)}``
where ``i(t)`` is the interval containing ``t``.  The interval splits into an
advanced part ``[t_i, zeta_i]`` (where ``gamma(t) >= t`` is possible) and a
delayed part ``(zeta_i, t_{i+1})``.

Bi-infinite knot sequences are represented by a finite window; the index
labels of the stored knots run from ``index_offset`` upward.  The right
edge of the window is closed into the last interval so that solution
operators may be evaluated at the final knot.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MeshError, OutOfWindow


@dataclass(frozen=True)
class Mesh:
    """Finite window of a general step-function mesh."""

    knots: np.ndarray          # shape (n+1,), strictly increasing
    anchors: np.ndarray        # shape (n,), t_i <= zeta_i <= t_{i+1}
    index_offset: int = 0      # integer index of knots[0] in the bi-infinite sequence
    family: str = "explicit"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        anchors = np.asarray(self.anchors, dtype=float)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "anchors", anchors)
        if knots.ndim != 1 or knots.size < 2:
            raise MeshError("mesh needs at least two knots")
        if anchors.shape != (knots.size - 1,):
            raise MeshError("need exactly one anchor per interval")
        gaps = np.diff(knots)
        if not np.all(gaps > 0):
            bad = int(np.argmin(gaps))
            raise MeshError(f"knots must be strictly increasing; violated at index {bad + self.index_offset}")
        if np.any(anchors < knots[:-1]) or np.any(anchors > knots[1:]):
            bad = int(np.argmax((anchors < knots[:-1]) | (anchors > knots[1:])))
            raise MeshError(f"anchor outside its interval at index {bad + self.index_offset}")

    # -- constructors -----------------------------------------------------

    @classmethod
    def from_arrays(cls, knots, anchors, index_offset: int = 0) -> "Mesh":
        return cls(np.asarray(knots, float), np.asarray(anchors, float), index_offset)

    @classmethod
    def uniform(cls, nu_plus: float, nu_minus: float, t0: float = 0.0,
                n_intervals: int = 20, i_min: int = 0) -> "Mesh":
        """Uniform mesh with zeta_i - t_i = nu_plus, t_{i+1} - zeta_i = nu_minus."""
        if nu_plus < 0 or nu_minus < 0 or nu_plus + nu_minus <= 0:
            raise MeshError("uniform mesh needs nu_plus, nu_minus >= 0 with positive sum")
        h = nu_plus + nu_minus
        idx = np.arange(i_min, i_min + n_intervals + 1)
        knots = t0 + idx * h
        anchors = knots[:-1] + nu_plus
        return cls(knots, anchors, i_min, "uniform",
                   {"nu_plus": nu_plus, "nu_minus": nu_minus, "t0": t0})

    @classmethod
    def greatest_integer(cls, i_min: int = 0, i_max: int = 20) -> "Mesh":
        """Mesh of gamma(t) = [t]: integer knots with zeta_i = t_i = i."""
        idx = np.arange(i_min, i_max + 2)
        return cls(idx.astype(float), idx[:-1].astype(float), i_min, "greatest_integer", {})

    @classmethod
    def cooke_wiener(cls, i_min: int = 0, i_max: int = 20) -> "Mesh":
        """Mesh of gamma(t) = 2[(t+1)/2]: t_i = 2i - 1, zeta_i = 2i."""
        idx = np.arange(i_min, i_max + 2)
        knots = 2.0 * idx - 1.0
        anchors = 2.0 * idx[:-1]
        return cls(knots, anchors, i_min, "cooke_wiener", {})

    @classmethod
    def affine(cls, c: float, d: float, i_min: int = 0, i_max: int = 20) -> "Mesh":
        """Mesh of gamma(t) = c[(t+d)/c]: t_i = c*i - d, zeta_i = c*i."""
        if not (c > 0 and c > d and d >= 0):
            raise MeshError("affine mesh needs c > 0 and 0 <= d < c")
        idx = np.arange(i_min, i_max + 2)
        knots = c * idx - d
        anchors = c * idx[:-1]
        return cls(knots, anchors, i_min, "affine", {"c": c, "d": d})

    # -- basic queries ----------------------------------------------------

    @property
    def n_intervals(self) -> int:
        return self.knots.size - 1

    @property
    def t_min(self) -> float:
        return float(self.knots[0])

    @property
    def t_max(self) -> float:
        return float(self.knots[-1])

    @property
    def i_min(self) -> int:
        return self.index_offset

    @property
    def i_max(self) -> int:
        return self.index_offset + self.n_intervals - 1

    def position(self, t: float) -> int:
        """0-based interval position of t; right edge closes into last interval."""
        if t < self.knots[0] or t > self.knots[-1]:
            raise OutOfWindow(f"t={t} outside mesh window [{self.t_min}, {self.t_max}]")
        pos = int(np.searchsorted(self.knots, t, side="right")) - 1
        return min(pos, self.n_intervals - 1)

    def interval_index(self, t: float) -> int:
        """Index i with t_i <= t < t_{i+1} (right-continuous at knots)."""
        return self.position(t) + self.index_offset

    def gamma(self, t: float) -> float:
        """Step function value zeta_{i(t)}."""
        return float(self.anchors[self.position(t)])

    def split(self, i: int) -> tuple[tuple[float, float], tuple[float, float]]:
        """Advanced [t_i, zeta_i] and delayed (zeta_i, t_{i+1}) sub-intervals."""
        pos = self._pos_of_index(i)
        return ((float(self.knots[pos]), float(self.anchors[pos])),
                (float(self.anchors[pos]), float(self.knots[pos + 1])))

    def tbar(self) -> float:
        """Largest advanced / delayed half-length over the window."""
        left = self.anchors - self.knots[:-1]
        right = self.knots[1:] - self.anchors
        return float(max(left.max(), right.max()))

    def min_gap(self) -> float:
        """Smallest knot spacing over the window (finite surrogate of (S2))."""
        return float(np.diff(self.knots).min())

    def knot(self, i: int) -> float:
        """Knot t_i by index label (i may equal i_max + 1 for the right edge)."""
        pos = i - self.index_offset
        if not 0 <= pos <= self.n_intervals:
            raise OutOfWindow(f"knot index {i} outside stored range")
        return float(self.knots[pos])

    def anchor(self, i: int) -> float:
        """Anchor zeta_i by index label."""
        return float(self.anchors[self._pos_of_index(i)])

    def _pos_of_index(self, i: int) -> int:
        pos = i - self.index_offset
        if not 0 <= pos < self.n_intervals:
            raise OutOfWindow(f"interval index {i} outside stored range")
        return pos

    def breakpoints(self, lo: float | None = None, hi: float | None = None) -> np.ndarray:
        """Sorted knots and anchors inside [lo, hi] (window by default)."""
        lo = self.t_min if lo is None else lo
        hi = self.t_max if hi is None else hi
        pts = np.concatenate([self.knots, self.anchors])
        pts = pts[(pts >= lo) & (pts <= hi)]
        return np.unique(np.concatenate([pts, [lo, hi]]))
