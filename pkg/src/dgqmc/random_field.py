"""Parametric diffusion coefficients on the unit square.

Two models are supported:

* ``affine``:    a(x, y) = a0(x) + sum_j y_j psi_j(x),      y_j in [-1/2, 1/2]
* ``lognormal``: a(x, y) = a0(x) * exp(sum_j y_j psi_j(x)), y_j in R

with the sine-product expansion
psi_j(x) = (k_j^2 + l_j^2)^(-decay) * sin(k_j pi x1) * sin(l_j pi x2).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

AFFINE = "affine"
LOGNORMAL = "lognormal"
MODES = (AFFINE, LOGNORMAL)

DEFAULT_A0 = {AFFINE: 5.0, LOGNORMAL: 1.0}

Scalar = Union[float, Callable[[np.ndarray], np.ndarray]]


class ModelViolation(ValueError):
    """Raised when a coefficient model breaks its positivity assumptions."""


@dataclass(frozen=True)
class BasisTerm:
    k: int
    l: int
    amplitude: float


def order_basis(s: int, decay: float) -> list[BasisTerm]:
    """First ``s`` index pairs (k, l) ordered by nonincreasing amplitude.

    Pairs are sorted by k^2 + l^2; ties are broken lexicographically in (k, l).
    """
    if int(s) != s or s < 1:
        raise ValueError(f"s must be a positive integer, got {s!r}")
    if not decay > 1:
        raise ValueError(f"decay must exceed 1, got {decay!r}")
    s = int(s)
    # every pair with k^2 + l^2 <= r2 is enumerated; r2 grows until s pairs fit
    r2 = 2
    while True:
        kmax = math.isqrt(r2)
        pairs = [(k * k + l * l, k, l)
                 for k in range(1, kmax + 1)
                 for l in range(1, kmax + 1)
                 if k * k + l * l <= r2]
        if len(pairs) >= s:
            break
        r2 *= 2
    pairs.sort()
    return [BasisTerm(k, l, float(nsq) ** (-decay)) for nsq, k, l in pairs[:s]]


@dataclass(frozen=True)
class RandomFieldSpec:
    """Coefficient model, base field and truncated expansion.

    ``a0`` may be a constant or a vectorised callable of an ``(N, 2)`` point
    array; in the latter case ``a0_range`` gives (min, max) of a0 over the
    closed square, otherwise it is estimated on a fine grid.
    """

    mode: str = AFFINE
    s: int = 100
    decay: float = 1.3
    a0: Scalar | None = None
    a0_range: tuple[float, float] | None = None
    basis: tuple[BasisTerm, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.a0 is None:
            object.__setattr__(self, "a0", DEFAULT_A0[self.mode])
        if not self.basis:
            object.__setattr__(self, "basis", tuple(order_basis(self.s, self.decay)))
        elif len(self.basis) != self.s:
            raise ValueError("basis length must equal s")
        if self.a0_range is None:
            object.__setattr__(self, "a0_range", _a0_range(self.a0))
        lo, _ = self.a0_range
        if self.mode == LOGNORMAL and lo <= 0:
            raise ModelViolation("lognormal model requires min a0 > 0")
        if self.mode == AFFINE and lo - 0.5 * self.amplitudes.sum() <= 0:
            raise ModelViolation(
                "affine model requires min a0 - sum(beta)/2 > 0 "
                f"(got {lo - 0.5 * self.amplitudes.sum():.6g})")

    @property
    def amplitudes(self) -> np.ndarray:
        """beta_j = sup |psi_j|, nonincreasing."""
        return np.array([t.amplitude for t in self.basis])

    def a0_values(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        if callable(self.a0):
            return np.asarray(self.a0(points), dtype=float).reshape(points.shape[:-1])
        return np.full(points.shape[:-1], float(self.a0))

    def basis_values(self, points: np.ndarray) -> np.ndarray:
        """Matrix ``Psi[..., j] = psi_j(x)`` for points of shape ``(..., 2)``."""
        points = np.asarray(points, dtype=float)
        k = np.array([t.k for t in self.basis], dtype=float)
        l = np.array([t.l for t in self.basis], dtype=float)
        x1 = points[..., 0, None]
        x2 = points[..., 1, None]
        return self.amplitudes * np.sin(k * np.pi * x1) * np.sin(l * np.pi * x2)

    def combine(self, a0v: np.ndarray, field_values: np.ndarray) -> np.ndarray:
        """Coefficient from a0 values and the expansion sum_j y_j psi_j."""
        if self.mode == AFFINE:
            return a0v + field_values
        return a0v * np.exp(field_values)


def _a0_range(a0: Scalar) -> tuple[float, float]:
    if not callable(a0):
        return float(a0), float(a0)
    g = np.linspace(0.0, 1.0, 201)
    X, Y = np.meshgrid(g, g)
    vals = np.asarray(a0(np.column_stack([X.ravel(), Y.ravel()])), dtype=float)
    return float(vals.min()), float(vals.max())


def _check_y(spec: RandomFieldSpec, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.shape[-1] != spec.s:
        raise ValueError(f"parameter dimension {y.shape[-1]} does not match s={spec.s}")
    if not np.all(np.isfinite(y)):
        raise ValueError("parameter vector must be finite")
    if spec.mode == AFFINE and np.any(np.abs(y) > 0.5):
        raise ValueError("affine parameters must lie in [-1/2, 1/2]")
    return y


def eval_coefficient(spec: RandomFieldSpec, y: Sequence[float], x) -> np.ndarray | float:
    """a(x, y) for one parameter vector at one point or an ``(N, 2)`` array."""
    y = _check_y(spec, y)
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    a = spec.combine(spec.a0_values(pts), spec.basis_values(pts) @ y)
    return float(a[0]) if single else a


def coefficient_bounds(spec: RandomFieldSpec, y: Sequence[float] | None = None) -> tuple[float, float]:
    """Envelope (a_min, a_max) of the coefficient.

    Affine bounds are global; lognormal bounds depend on ``y``.
    """
    beta = spec.amplitudes
    lo, hi = spec.a0_range
    if spec.mode == AFFINE:
        half = 0.5 * beta.sum()
        amin, amax = lo - half, hi + half
        if amin <= 0:
            raise ModelViolation(f"affine lower bound is nonpositive: {amin}")
        return amin, amax
    if y is None:
        raise ValueError("lognormal bounds require a parameter vector")
    y = _check_y(spec, y)
    t = float(np.abs(y) @ beta)
    return lo * math.exp(-t), hi * math.exp(t)
