"""Convergence studies: QMC sampling of the PDE solution, RMS errors and rate fits."""
from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .dgfem import (NIPG, THETAS, DGSpace, P1Space, default_load, penalty_value,
                    solve_sparse)
from .lattice import (GeneratingVector, ShiftSet, lattice_points, load_generating_vector,
                      pairwise_sum, shift_center_uniform, shift_transform_normal)
from .mesh import build_structured_mesh
from .random_field import AFFINE, LOGNORMAL, MODES, RandomFieldSpec
from .theory import cbc_construct, weights_for

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


def _is_pow2(n) -> bool:
    return isinstance(n, int) and n >= 1 and n & (n - 1) == 0


@dataclass
class ExperimentConfig:
    mode: str = AFFINE
    a0: Optional[float] = None
    decay: float = 1.3
    s: int = 100
    mesh_m: int = 16
    degree: int = 1
    theta: int = -1
    eta: Union[str, float] = "analytic"
    n_list: list = field(default_factory=lambda: [2 ** k for k in range(14, 20)])
    shifts: int = 16
    seed: int = 12345
    vector: str = "cbc"
    out: str = "results/table.txt"
    method: str = "dg"
    error_mode: str = "spread"
    cbc_max_order: int = 8
    p_slack: float = 0.01

    def __post_init__(self):
        errs = []
        if self.mode not in MODES:
            errs.append(f"mode: must be one of {MODES}, got {self.mode!r}")
        if self.a0 is None:
            self.a0 = 5.0 if self.mode == AFFINE else 1.0
        if not isinstance(self.a0, (int, float)) or self.a0 <= 0:
            errs.append(f"a0: must be a positive number, got {self.a0!r}")
        if not isinstance(self.decay, (int, float)) or self.decay <= 1:
            errs.append(f"decay: must exceed 1, got {self.decay!r}")
        for key in ("s", "mesh_m", "shifts", "cbc_max_order"):
            v = getattr(self, key)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                errs.append(f"{key}: must be a positive integer, got {v!r}")
        if self.degree not in (1, 2):
            errs.append(f"degree: must be 1 or 2, got {self.degree!r}")
        if self.theta not in THETAS or isinstance(self.theta, bool):
            errs.append(f"theta: must be one of {THETAS}, got {self.theta!r}")
        if self.eta != "analytic" and (not isinstance(self.eta, (int, float)) or self.eta <= 0):
            errs.append(f"eta: must be 'analytic' or a positive number, got {self.eta!r}")
        ns = self.n_list
        if not isinstance(ns, list) or not ns or not all(_is_pow2(n) for n in ns):
            errs.append(f"n_list: entries must be powers of two, got {ns!r}")
        elif any(b <= a for a, b in zip(ns, ns[1:])):
            errs.append(f"n_list: must be strictly increasing, got {ns!r}")
        if isinstance(self.shifts, int) and self.shifts < 2:
            errs.append("shifts: at least 2 random shifts are needed for the error estimate")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2 ** 64:
            errs.append(f"seed: must be a 64-bit nonnegative integer, got {self.seed!r}")
        if not isinstance(self.vector, str) or not self.vector:
            errs.append("vector: must be 'cbc' or a file path")
        if self.method not in ("dg", "cg"):
            errs.append(f"method: must be 'dg' or 'cg', got {self.method!r}")
        if self.error_mode not in ("spread", "reference"):
            errs.append(f"error_mode: must be 'spread' or 'reference', got {self.error_mode!r}")
        if self.error_mode == "reference" and isinstance(ns, list) and len(ns) < 3:
            errs.append("error_mode: reference mode needs at least three n values")
        if errs:
            raise ConfigError("; ".join(errs))

    def field_spec(self) -> RandomFieldSpec:
        return RandomFieldSpec(mode=self.mode, s=self.s, decay=self.decay, a0=float(self.a0))

    def to_dict(self) -> dict:
        return asdict(self)


# -- samplers -----------------------------------------------------------------

class IPDGSampler:
    """Solves the IPDG system for parameter vectors of one field spec."""

    def __init__(self, space: DGSpace, spec: RandomFieldSpec, theta: int = NIPG,
                 eta: Optional[float] = None, f=default_load):
        self.space = space
        self.spec = spec
        self.theta = theta
        self.eta_override = eta
        self.c_tr = space.trace_constant()
        self.ndof = space.ndof
        self._psi_vol = spec.basis_values(space.vol_points).reshape(-1, spec.s)
        self._psi_face = spec.basis_values(space.face_points).reshape(-1, spec.s)
        self._a0_vol = spec.a0_values(space.vol_points).ravel()
        self._a0_face = spec.a0_values(space.face_points).ravel()
        self._b = space.load(f)
        self._fixed_eta = None
        if eta is not None or spec.mode == AFFINE:
            self._fixed_eta = penalty_value(spec, None, theta, eta, self.c_tr)

    def eta(self, y) -> float:
        if self._fixed_eta is not None:
            return self._fixed_eta
        if self.theta == NIPG:
            t = float(np.abs(y) @ self.spec.amplitudes)
            return max(math.exp(3.0 * t), self.spec.a0_range[0] * math.exp(-t))
        return penalty_value(self.spec, y, self.theta, None, self.c_tr)

    def coefficient(self, y) -> tuple[np.ndarray, np.ndarray]:
        sp_ = self.space
        a_vol = self.spec.combine(self._a0_vol, self._psi_vol @ y).reshape(sp_.vol_points.shape[:-1])
        a_face = self.spec.combine(self._a0_face, self._psi_face @ y).reshape(sp_.face_points.shape[:-1])
        if a_vol.min() <= 0 or a_face.min() <= 0:
            raise ValueError("coefficient is not strictly positive")
        return a_vol, a_face

    def solve(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        a_vol, a_face = self.coefficient(y)
        A = self.space.operator(a_vol, a_face, self.theta, self.eta(y))
        return solve_sparse(A, self._b)

    def mass_norm_sq(self, U) -> np.ndarray:
        return self.space.mass_norm_sq(U)


class P1Sampler:
    """Conforming P1 comparator with the same interface as :class:`IPDGSampler`."""

    def __init__(self, space: P1Space, spec: RandomFieldSpec, f=default_load):
        self.space = space
        self.spec = spec
        self.ndof = space.ndof
        self._psi = spec.basis_values(space.vol_points).reshape(-1, spec.s)
        self._a0 = spec.a0_values(space.vol_points).ravel()
        self._b = space.load(f)

    def solve(self, y) -> np.ndarray:
        a = self.spec.combine(self._a0, self._psi @ np.asarray(y, dtype=float))
        if a.min() <= 0:
            raise ValueError("coefficient is not strictly positive")
        return self.space.expand(solve_sparse(self.space.operator(a.reshape(self.space.vol_points.shape[:-1])), self._b))

    def mass_norm_sq(self, U) -> np.ndarray:
        return self.space.mass_norm_sq(U)


def build_sampler(config: ExperimentConfig):
    spec = config.field_spec()
    mesh = build_structured_mesh(config.mesh_m)
    if config.method == "cg":
        return P1Sampler(P1Space(mesh), spec)
    eta = None if config.eta == "analytic" else float(config.eta)
    return IPDGSampler(DGSpace(mesh, config.degree), spec, config.theta, eta)


# -- estimators -----------------------------------------------------------------

def rms_error_estimate(shift_means: np.ndarray, space=None) -> float:
    """sqrt( sum_r ||Q_r - Q||^2 / (R (R - 1)) ), Q the mean of the R shift means.

    ``space`` supplies ``mass_norm_sq``; without it plain Euclidean norms are used.
    """
    Q = np.asarray(shift_means, dtype=float)
    R = len(Q)
    if R < 2:
        raise ValueError("need at least two shift means")
    D = Q - pairwise_sum(Q) / R
    if space is None:
        sq = np.sum(D.reshape(R, -1) ** 2, axis=1)
    else:
        sq = space.mass_norm_sq(D)
    return float(math.sqrt(max(math.fsum(sq), 0.0) / (R * (R - 1))))


@dataclass
class RateFit:
    C: float
    rate: float
    residual: float


def fit_rate(errors: Sequence[tuple[float, float]]) -> RateFit:
    """Least-squares fit of log e = log C + r log n."""
    data = np.asarray(errors, dtype=float)
    if data.ndim != 2 or data.shape[1] != 2 or len(data) < 2:
        raise ValueError("need at least two (n, error) pairs")
    if np.any(data <= 0):
        raise ValueError("n and error values must be positive")
    X = np.column_stack([np.ones(len(data)), np.log(data[:, 0])])
    coef, *_ = np.linalg.lstsq(X, np.log(data[:, 1]), rcond=None)
    resid = float(np.linalg.norm(X @ coef - np.log(data[:, 1])))
    C = math.exp(coef[0]) if coef[0] < 709.0 else math.inf
    return RateFit(float(C), float(coef[1]), resid)


@dataclass
class ConvergenceReport:
    n: list
    errors: list
    fit: RateFit
    config: dict
    wall_time: float = 0.0
    grand_means: dict = field(default_factory=dict, repr=False)

    def rows(self):
        return list(zip(self.n, self.errors))


def generating_vector(config: ExperimentConfig, n: int) -> GeneratingVector:
    if config.vector == "cbc":
        w = weights_for(config.field_spec(), slack=config.p_slack)
        return cbc_construct(n, config.s, w, max_order=config.cbc_max_order)
    return load_generating_vector(config.vector, n, config.s)


def _shift_means(sampler, pts: np.ndarray, shifts: ShiftSet, normal: bool, threads: int,
                 n_label: int) -> np.ndarray:
    n = len(pts)
    means = []
    for r, delta in enumerate(shifts.shifts):
        Y = (shift_transform_normal if normal else shift_center_uniform)(pts, delta).values
        out = np.empty((n, sampler.ndof))

        def work(rows):
            for i in rows:
                try:
                    out[i] = sampler.solve(Y[i])
                except Exception as exc:
                    raise RuntimeError(f"solve failed at n={n_label}, shift={r}, point={i}, "
                                       f"y={Y[i].tolist()}: {exc}") from exc

        chunks = np.array_split(np.arange(n), max(1, min(threads, n)) * 4)
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                list(pool.map(work, chunks))
        else:
            for c in chunks:
                work(c)
        means.append(pairwise_sum(out) / n)
    return np.array(means)


def run_convergence(config: ExperimentConfig, threads: int = 1, sampler=None,
                    vectors: Optional[dict] = None) -> ConvergenceReport:
    """RMS error of the randomly shifted lattice estimate of E[u] for each n.

    ``sampler`` overrides the PDE solver (anything with ``solve``,
    ``mass_norm_sq`` and ``ndof``); ``vectors`` maps n to a precomputed
    generating vector.
    """
    t0 = time.perf_counter()
    sampler = sampler or build_sampler(config)
    shifts = ShiftSet.generate(config.shifts, config.s, config.seed)
    normal = config.mode == LOGNORMAL
    errors, grand = [], {}
    for n in config.n_list:
        gv = (vectors or {}).get(n) or generating_vector(config, n)
        pts = lattice_points(gv.z, n, config.s)
        Q = _shift_means(sampler, pts, shifts, normal, threads, n)
        grand[n] = pairwise_sum(Q) / len(Q)
        if config.error_mode == "spread":
            errors.append(rms_error_estimate(Q, sampler))
        log.info("n=%d done after %.1fs", n, time.perf_counter() - t0)
    ns = list(config.n_list)
    if config.error_mode == "reference":
        ref = grand[ns[-1]]
        ns = ns[:-1]
        errors = [float(math.sqrt(max(sampler.mass_norm_sq(grand[n] - ref), 0.0))) for n in ns]
    positive = [(n, e) for n, e in zip(ns, errors) if e > 0]
    fit = fit_rate(positive) if len(positive) >= 2 else RateFit(float("nan"), float("nan"), float("nan"))
    return ConvergenceReport(ns, errors, fit, config.to_dict(), time.perf_counter() - t0, grand)


# -- table I/O ------------------------------------------------------------------

def emit_table(report: ConvergenceReport, path) -> Path:
    """Write ``n rmse`` rows (no header) and a ``.meta.json`` sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(f"{n} {e!r}\n" for n, e in report.rows()))
    meta = {"config": report.config, "C": report.fit.C, "rate": report.fit.rate,
            "residual": report.fit.residual, "wall_time": report.wall_time}
    meta_path = path.with_name(path.name + ".meta.json")
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def read_table(path) -> list[tuple[int, float]]:
    rows = []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if parts:
            rows.append((int(float(parts[0])), float(parts[1])))
    return rows
