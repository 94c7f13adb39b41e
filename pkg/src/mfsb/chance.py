"""Probabilistic half-space constraints.

A half-space keeps the state on its free side, P(a'x <= beta) >= 1 - delta.
The exact Gaussian reformulation z*sqrt(a'Sa) + a'mu - beta <= 0 (z the
standard-normal quantile at 1-delta) is concave in the variance a'Sa, so the
tangent line at a reference variance gives a linear constraint that
conservatively dominates it for every covariance.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .errors import ConfigurationError, NumericalDomainError
from .gaussmix import Gaussian

REF_VARIANCE_FLOOR = 1e-12


@dataclass(frozen=True)
class HalfSpace:
    """Free half-space {x : a'x <= beta}; `window` is an inclusive knot index
    range or None for the default (every interior knot)."""

    a: np.ndarray
    beta: float
    window: tuple | None = None

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float).reshape(-1)
        if np.linalg.norm(a) == 0.0:
            raise ConfigurationError("half-space normal must be nonzero")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "beta", float(self.beta))

    def active_knots(self, knot_count: int):
        if self.window is None:
            return range(1, knot_count - 1)
        lo, hi = self.window
        lo = max(1, int(lo))
        hi = min(knot_count - 2, int(hi))
        return range(lo, hi + 1)


@dataclass(frozen=True)
class Obstacle:
    """Convex polytope given by its faces; a point is inside the obstacle iff
    it is outside every face's free half-space."""

    faces: tuple

    def __post_init__(self):
        faces = tuple(self.faces)
        if not faces:
            raise ConfigurationError("obstacle needs at least one face")
        object.__setattr__(self, "faces", faces)

    def contains(self, x: np.ndarray) -> np.ndarray:
        """Boolean mask over rows of x (N, n)."""
        x = np.atleast_2d(np.asarray(x, float))
        inside = np.ones(x.shape[0], dtype=bool)
        for f in self.faces:
            inside &= x @ f.a > f.beta
        return inside


@dataclass(frozen=True)
class Route:
    """A homotopy class: per obstacle, the index of the face whose half-space
    constraint is enforced for policies on this route."""

    name: str
    face_choice: tuple = ()

    def faces(self, obstacles):
        if len(self.face_choice) != len(obstacles):
            raise ConfigurationError(
                f"route {self.name!r} chooses {len(self.face_choice)} faces "
                f"for {len(obstacles)} obstacles")
        return [obs.faces[c] for obs, c in zip(obstacles, self.face_choice)]


@dataclass
class ChanceSpec:
    """Violation budget: total delta_t plus optional fixed per-face override."""

    total_budget: float
    per_face_budget: float | None = None
    window: tuple | None = None
    allocation: float = field(default=0.0)

    def __post_init__(self):
        if not 0.0 < self.total_budget < 0.5:
            raise ConfigurationError("total budget must lie in (0, 1/2)")
        if self.per_face_budget is not None and not 0.0 < self.per_face_budget < 0.5:
            raise ConfigurationError("per-face budget must lie in (0, 1/2)")


def allocate_budget(spec: ChanceSpec, n_components: int, n_faces: int) -> float:
    """Budget per (component, face) pair: uniform split of the total unless a
    fixed per-face override is given."""
    if n_faces == 0:
        raise ConfigurationError("nonzero budget with zero constraint faces")
    if spec.per_face_budget is not None:
        value = spec.per_face_budget
    else:
        value = spec.total_budget / (n_components * n_faces)
    spec.allocation = value
    return value


def exact_constraint_value(g: Gaussian, h: HalfSpace, delta: float) -> float:
    """z * sqrt(a'Sa) + a'mu - beta; nonpositive iff P(a'x <= beta) >= 1-delta."""
    z = norm.ppf(1.0 - delta)
    var = float(h.a @ g.cov @ h.a)
    return z * np.sqrt(max(var, 0.0)) + float(h.a @ g.mean) - h.beta


@dataclass(frozen=True)
class LinearizedConstraint:
    """Affine-in-(Sigma, mu) surrogate: l'Sl + a'mu + b <= 0."""

    ell: np.ndarray
    a: np.ndarray
    b: float
    window: tuple | None = None

    def value(self, mu: np.ndarray, Sigma: np.ndarray) -> float:
        return float(self.ell @ Sigma @ self.ell + self.a @ mu + self.b)


def linearize(h: HalfSpace, delta: float, sigma_ref: np.ndarray,
              window: tuple | None = None) -> LinearizedConstraint:
    """Tangent of the exact constraint at the reference covariance.

    With x_r = a'S_r a and z the quantile, sqrt(x) <= sqrt(x_r)/2 + x/(2 sqrt(x_r))
    gives l = sqrt(z / (2 sqrt(x_r))) a and b = -beta + z sqrt(x_r)/2, so the
    linearized value dominates the exact one for every covariance and matches
    it at S = S_r.
    """
    z = norm.ppf(1.0 - delta)
    if z <= 0.0:
        raise NumericalDomainError(f"budget {delta} >= 1/2 has no tightening effect")
    x_r = float(h.a @ np.asarray(sigma_ref, float) @ h.a)
    if x_r <= REF_VARIANCE_FLOOR:
        raise NumericalDomainError(
            "reference variance along the face normal is degenerate")
    root = np.sqrt(x_r)
    ell = np.sqrt(z / (2.0 * root)) * h.a
    b = -h.beta + 0.5 * z * root
    return LinearizedConstraint(ell=ell, a=h.a.copy(), b=b,
                                window=window if window is not None else h.window)


def violation_fraction(obstacles, x: np.ndarray) -> float:
    """Fraction of rows of x lying inside any obstacle."""
    if not obstacles:
        return 0.0
    x = np.atleast_2d(np.asarray(x, float))
    inside = np.zeros(x.shape[0], dtype=bool)
    for obs in obstacles:
        inside |= obs.contains(x)
    return float(np.mean(inside))
