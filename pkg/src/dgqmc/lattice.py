"""Randomly shifted rank-1 lattice rules."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.special import erfc

UNIFORM = "uniform"
NORMAL = "normal"

# clamp for {t + shift} == 0 before the inverse normal map
W_FLOOR = 2.0 ** -53


@dataclass(frozen=True)
class GeneratingVector:
    z: np.ndarray
    n: int
    errors: np.ndarray | None = None  # squared worst-case errors per CBC stage

    def __post_init__(self):
        z = np.asarray(self.z, dtype=np.int64) % self.n
        object.__setattr__(self, "z", z)

    @property
    def s(self) -> int:
        return len(self.z)


def lattice_points(z: Sequence[int], n: int, s: int | None = None) -> np.ndarray:
    """Rows t_i = {i z / n} for i = 1..n; the last row is the origin."""
    z = np.asarray(z, dtype=np.int64)
    if n < 1:
        raise ValueError("n must be positive")
    s = len(z) if s is None else s
    if s > len(z):
        raise ValueError(f"requested s={s} exceeds generating vector length {len(z)}")
    i = np.arange(1, n + 1, dtype=np.int64)[:, None]
    return ((i * (z[:s] % n)[None, :]) % n) / n


@dataclass(frozen=True)
class ShiftSet:
    """R i.i.d. uniform shifts; shift r is drawn from its own stream keyed by (seed, r)."""

    shifts: np.ndarray
    seed: int

    @classmethod
    def generate(cls, R: int, s: int, seed: int) -> "ShiftSet":
        rows = [np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(r,))).random(s)
                for r in range(R)]
        return cls(np.array(rows).reshape(R, s), seed)

    def __len__(self):
        return len(self.shifts)


@dataclass(frozen=True)
class SampleMatrix:
    values: np.ndarray
    domain: str


def shift_center_uniform(points: np.ndarray, shift: np.ndarray) -> SampleMatrix:
    """{t + shift} - 1/2, entries in [-1/2, 1/2)."""
    w = np.mod(np.asarray(points) + np.asarray(shift), 1.0)
    return SampleMatrix(w - 0.5, UNIFORM)


def normal_cdf(x):
    return 0.5 * erfc(-np.asarray(x, dtype=float) / math.sqrt(2.0))


# Wichura, Algorithm AS 241 (PPND16)
_A = (3.3871328727963666080e0, 1.3314166789178437745e2, 1.9715909503065514427e3,
      1.3731693765509461125e4, 4.5921953931549871457e4, 6.7265770927008700853e4,
      3.3430575583588128105e4, 2.5090809287301226727e3)
_B = (1.0, 4.2313330701600911252e1, 6.8718700749205790830e2, 5.3941960214247511077e3,
      2.1213794301586595867e4, 3.9307895800092710610e4, 2.8729085735721942674e4,
      5.2264952788528545610e3)
_C = (1.42343711074968357734e0, 4.63033784615654529590e0, 5.76949722146069140550e0,
      3.64784832476320460504e0, 1.27045825245236838258e0, 2.41780725177450611770e-1,
      2.27238449892691845833e-2, 7.74545014278341407640e-4)
_D = (1.0, 2.05319162663775882187e0, 1.67638483018380384940e0, 6.89767334985100004550e-1,
      1.48103976427480074590e-1, 1.51986665636164571966e-2, 5.47593808499534494600e-4,
      1.05075007164441684324e-9)
_E = (6.65790464350110377720e0, 5.46378491116411436990e0, 1.78482653991729133580e0,
      2.96560571828504891230e-1, 2.65321895265761230930e-2, 1.24266094738807843860e-3,
      2.71155556874348757815e-5, 2.01033439929228813265e-7)
_F = (1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1, 1.48753612908506148525e-2,
      7.86869131145613259100e-4, 1.84631831751005468180e-5, 1.42151175831644588870e-7,
      2.04426310338993978564e-15)


def _poly(c, x):
    out = np.zeros_like(x)
    for ci in reversed(c):
        out = out * x + ci
    return out


def inverse_normal_cdf(w):
    """Phi^{-1}(w) for w in (0, 1); scalar or array.

    Rational approximation followed by one Newton step against an
    erfc-based Phi, evaluated on the smaller tail for accuracy.
    """
    w_arr = np.asarray(w, dtype=float)
    if np.any(~(w_arr > 0) | ~(w_arr < 1)):
        raise ValueError("inverse_normal_cdf requires 0 < w < 1")
    q = w_arr - 0.5
    x = np.empty_like(w_arr)

    central = np.abs(q) <= 0.425
    r = 0.180625 - q[central] ** 2
    x[central] = q[central] * _poly(_A, r) / _poly(_B, r)

    tail = ~central
    p = np.minimum(w_arr[tail], 1.0 - w_arr[tail])
    r = np.sqrt(-np.log(p))
    near = r <= 5.0
    xt = np.empty_like(r)
    rn = r[near] - 1.6
    xt[near] = _poly(_C, rn) / _poly(_D, rn)
    rf = r[~near] - 5.0
    xt[~near] = _poly(_E, rf) / _poly(_F, rf)
    x[tail] = np.where(q[tail] < 0, -xt, xt)

    # one Newton step on the lower tail: Phi(-|x|) = min(w, 1 - w)
    lo = np.minimum(w_arr, 1.0 - w_arr)
    ax = -np.abs(x)
    dens = np.exp(-0.5 * ax * ax) / math.sqrt(2.0 * math.pi)
    ax = ax - (normal_cdf(ax) - lo) / dens
    x = np.where(w_arr < 0.5, ax, -ax)
    x = np.where(w_arr == 0.5, 0.0, x)
    return float(x) if np.ndim(w) == 0 else x


def shift_transform_normal(points: np.ndarray, shift: np.ndarray) -> SampleMatrix:
    """Phi^{-1}({t + shift}) with exact zeros clamped to 2^-53."""
    w = np.mod(np.asarray(points) + np.asarray(shift), 1.0)
    w = np.clip(w, W_FLOOR, 1.0 - W_FLOOR)
    return SampleMatrix(inverse_normal_cdf(w), NORMAL)


def pairwise_sum(values: np.ndarray) -> np.ndarray:
    """Sum along axis 0 by recursive halving; fixed order for reproducibility."""
    v = np.asarray(values, dtype=float)
    while len(v) > 1:
        half = len(v) // 2
        head = v[:half] + v[half:2 * half]
        v = np.concatenate([head, v[2 * half:]]) if len(v) % 2 else head
    return v[0] if len(v) else np.zeros(np.shape(values)[1:])


def qmc_estimate(evaluator: Callable[[np.ndarray], np.ndarray],
                 samples: Sequence[SampleMatrix]) -> tuple[np.ndarray, np.ndarray]:
    """Per-shift means and their grand mean.

    ``evaluator`` maps one parameter vector to a scalar or a vector; results
    are averaged componentwise. Returns ``(shift_means, grand_mean)`` with
    ``shift_means`` of shape ``(R, ...)``.
    """
    means = []
    for r, sm in enumerate(samples):
        vals = []
        for i, y in enumerate(sm.values):
            try:
                vals.append(np.asarray(evaluator(y), dtype=float))
            except Exception as exc:
                raise RuntimeError(f"evaluator failed on shift {r}, point {i}, y={y}") from exc
        means.append(pairwise_sum(np.array(vals)) / len(vals))
    means = np.array(means)
    return means, pairwise_sum(means) / len(means)


def load_generating_vector(path, n: int, s: int) -> GeneratingVector:
    """Read a vector stored one integer per line or as ``index value`` pairs."""
    values = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        parts = line.split("#", 1)[0].split()
        if not parts:
            continue
        if len(parts) > 2:
            raise ValueError(f"{path}:{lineno}: expected 1 or 2 integers, got {line!r}")
        try:
            values.append(int(parts[-1]))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: not an integer: {parts[-1]!r}") from exc
    if len(values) < s:
        raise ValueError(f"{path} holds {len(values)} entries, {s} requested")
    z = np.array(values[:s], dtype=np.int64) % n
    return GeneratingVector(z, n)


def save_generating_vector(gv: GeneratingVector, path, pairs: bool = False) -> None:
    lines = [f"{j + 1} {int(v)}" if pairs else str(int(v)) for j, v in enumerate(gv.z)]
    Path(path).write_text("\n".join(lines) + "\n")
