"""Interior penalty DG discretisation of -div(a grad u) = f with u = 0 on the boundary.

The bilinear form is

    B(u, v) = sum_T int_T a grad u . grad v
            + sum_F int_F [ theta {a grad v} . [[u]] - {a grad u} . [[v]]
                            + eta / h_F [[u]] . [[v]] ]

with theta = -1 (SIPG), 0 (IIPG) or +1 (NIPG). On boundary faces the
average is the one-sided trace and the jump is ``v n``.

Both the coefficient terms and the penalty term are linear, so every entry
of the operator is a fixed linear combination of the coefficient values at
the quadrature nodes plus eta times a fixed pattern. :class:`DGSpace`
precomputes those combinations once; assembling a new sample then costs
two small tensor contractions.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .mesh import Mesh
from .quadrature import lagrange_basis, lagrange_grads, line_rule, triangle_rule
from .random_field import (AFFINE, LOGNORMAL, ModelViolation, RandomFieldSpec,
                           coefficient_bounds)

SIPG, IIPG, NIPG = -1, 0, 1
THETAS = (SIPG, IIPG, NIPG)

Coefficient = Union[float, Callable[[np.ndarray], np.ndarray]]


class SolveError(RuntimeError):
    """Factorisation or residual failure, typically a loss of coercivity."""


class PenaltyWarning(UserWarning):
    pass


def default_load(x: np.ndarray) -> np.ndarray:
    """f(x) = x1."""
    return x[..., 0]


def _evaluate(c: Coefficient, points: np.ndarray) -> np.ndarray:
    if callable(c):
        return np.broadcast_to(np.asarray(c(points), dtype=float), points.shape[:-1])
    return np.full(points.shape[:-1], float(c))


def _csr_pattern(rows: np.ndarray, cols: np.ndarray, n: int):
    keys = rows.ravel() * n + cols.ravel()
    uniq, inverse = np.unique(keys, return_inverse=True)
    r = uniq // n
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(r, minlength=n), out=indptr[1:])
    return indptr, (uniq % n).astype(np.int64), inverse.ravel()


class DGSpace:
    """Discontinuous P_k space (k = 1, 2) on a triangle mesh.

    Dofs are element-blocked: dof ``e * nb + i`` is the i-th Lagrange node of
    element ``e``.
    """

    def __init__(self, mesh: Mesh, degree: int = 1, quad_order: Optional[int] = None):
        if degree not in (1, 2):
            raise ValueError(f"degree must be 1 or 2, got {degree!r}")
        if mesh.areas.min() <= 0:
            raise ValueError("mesh contains degenerate elements")
        self.mesh = mesh
        self.degree = k = degree
        self.nb = (k + 1) * (k + 2) // 2
        self.ndof = mesh.n_elements * self.nb
        self.quad_order = quad_order or 2 * k + 2

        P = mesh.vertices[mesh.elements]
        self._v0 = P[:, 0]
        J = np.stack([P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]], axis=-1)
        self._invJ = np.linalg.inv(J)
        detJ = np.abs(np.linalg.det(J))

        xi, w = triangle_rule(self.quad_order)
        self.vol_points = self._v0[:, None, :] + np.einsum("eij,qj->eqi", J, xi)
        self.vol_weights = w[None, :] * detJ[:, None]
        self.vol_phi = lagrange_basis(xi, k)
        self.vol_grad = np.einsum("qbd,edi->eqbi", lagrange_grads(xi, k), self._invJ)

        t, wt = line_rule(self.quad_order)
        ft = mesh.face_table
        A = mesh.vertices[ft.vertices[:, 0]]
        B = mesh.vertices[ft.vertices[:, 1]]
        self.face_points = A[:, None, :] + t[None, :, None] * (B - A)[:, None, :]
        self.face_weights = wt[None, :] * mesh.face_lengths[:, None]
        self.face_h = mesh.face_lengths
        self.face_normals = mesh.face_normals
        self.boundary = ft.elements[:, 1] < 0
        plus = ft.elements[:, 0]
        minus = np.where(self.boundary, plus, ft.elements[:, 1])
        self.face_elements = np.stack([plus, minus], axis=1)
        self.face_kappa = np.where(self.boundary, 1.0, 0.5)

        phi, grad = [], []
        for e in (plus, minus):
            xi_f = np.einsum("fdi,fgi->fgd", self._invJ[e], self.face_points - self._v0[e][:, None, :])
            phi.append(lagrange_basis(xi_f, k))
            grad.append(np.einsum("fgbd,fdi->fgbi", lagrange_grads(xi_f, k), self._invJ[e]))
        # (nF, ng, side, nb) and (nF, ng, side, nb, 2); minus side vanishes on the boundary
        self.face_phi = np.stack(phi, axis=2)
        self.face_grad = np.stack(grad, axis=2)
        self.face_phi[self.boundary, :, 1] = 0.0
        self.face_grad[self.boundary, :, 1] = 0.0

        self._build_templates()

    # -- precomputation -------------------------------------------------
    def _build_templates(self):
        nb, nE = self.nb, self.mesh.n_elements
        self._K_vol = np.einsum("eq,eqid,eqjd->eqij", self.vol_weights, self.vol_grad, self.vol_grad)
        sign = np.array([1.0, -1.0])
        dn = np.einsum("fgsbi,fi->fgsb", self.face_grad, self.face_normals)
        wk = self.face_weights * self.face_kappa[:, None]
        # test side a / basis i, trial side b / basis j
        self._T_theta = np.einsum("fg,fgai,b,fgbj->fgabij", wk, dn, sign, self.face_phi)
        self._T_cons = -np.einsum("fg,fgbj,a,fgai->fgabij", wk, dn, sign, self.face_phi)
        self._T_pen = np.einsum("fg,a,b,fgai,fgbj->fabij", self.face_weights / self.face_h[:, None],
                                sign, sign, self.face_phi, self.face_phi)
        self._M_blocks = np.einsum("eq,qi,qj->eij", self.vol_weights, self.vol_phi, self.vol_phi)

        ed = np.arange(nE)[:, None] * nb + np.arange(nb)
        vr = np.broadcast_to(ed[:, :, None], (nE, nb, nb))
        vc = np.broadcast_to(ed[:, None, :], (nE, nb, nb))
        fd = self.face_elements[:, :, None] * nb + np.arange(nb)  # (nF, side, nb)
        shape = (len(fd), 2, 2, nb, nb)
        fr = np.broadcast_to(fd[:, :, None, :, None], shape)
        fc = np.broadcast_to(fd[:, None, :, None, :], shape)
        rows = np.concatenate([vr.ravel(), fr.ravel()])
        cols = np.concatenate([vc.ravel(), fc.ravel()])
        self._indptr, self._indices, self._coo_to_csr = _csr_pattern(rows, cols, self.ndof)
        self._theta_cache: dict[int, np.ndarray] = {}

    def _face_template(self, theta: int) -> np.ndarray:
        T = self._theta_cache.get(theta)
        if T is None:
            T = self._theta_cache[theta] = theta * self._T_theta + self._T_cons
        return T

    # -- operators -------------------------------------------------------
    def operator(self, a_vol: np.ndarray, a_face: np.ndarray, theta: int, eta: float) -> sp.csr_matrix:
        """Sparse IPDG operator from coefficient values at the quadrature nodes."""
        vol = np.einsum("eq,eqij->eij", a_vol, self._K_vol)
        face = np.einsum("fg,fgabij->fabij", a_face, self._face_template(theta)) + eta * self._T_pen
        coo = np.concatenate([vol.ravel(), face.ravel()])
        data = np.bincount(self._coo_to_csr, weights=coo, minlength=len(self._indices))
        return sp.csr_matrix((data, self._indices, self._indptr), shape=(self.ndof, self.ndof))

    def load(self, f: Coefficient = default_load) -> np.ndarray:
        fv = _evaluate(f, self.vol_points)
        return np.einsum("eq,eq,qi->ei", self.vol_weights, fv, self.vol_phi).ravel()

    def mass_matrix(self) -> sp.csr_matrix:
        return sp.block_diag(list(self._M_blocks), format="csr")

    def mass_norm_sq(self, U: np.ndarray) -> np.ndarray:
        """Squared L2 norms of one ``(ndof,)`` or many ``(..., ndof)`` coefficient vectors."""
        V = np.asarray(U).reshape(*np.shape(U)[:-1], self.mesh.n_elements, self.nb)
        return np.einsum("...ei,eij,...ej->...", V, self._M_blocks, V)

    def coefficient_at_nodes(self, a: Coefficient) -> tuple[np.ndarray, np.ndarray]:
        a_vol = _evaluate(a, self.vol_points)
        a_face = _evaluate(a, self.face_points)
        _check_positive(a_vol, a_face)
        return a_vol, a_face

    # -- traces ----------------------------------------------------------
    def face_traces(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Values ``(nF, ng, side)`` and gradients ``(nF, ng, side, 2)`` of u on faces."""
        U = np.asarray(u).reshape(self.mesh.n_elements, self.nb)[self.face_elements]
        vals = np.einsum("fgsb,fsb->fgs", self.face_phi, U)
        grads = np.einsum("fgsbi,fsb->fgsi", self.face_grad, U)
        return vals, grads

    def trace_constant(self) -> float:
        """Discrete trace constant estimate for P_k on triangles.

        Uses ||v||_F^2 <= (k+1)(k+2)/2 |F|/|T| ||v||_T^2, so that
        C_tr^2 = max (k+1)(k+2)/2 h_T |F| / |T|.
        """
        k = self.degree
        m = self.mesh
        c2 = (k + 1) * (k + 2) / 2 * m.diameters[:, None] * m.edge_lengths / m.areas[:, None]
        return float(math.sqrt(c2.max()))


def _check_positive(*arrays):
    for arr in arrays:
        if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
            raise ModelViolation("coefficient is not strictly positive at some quadrature node")


def jump(space: DGSpace, u: np.ndarray) -> np.ndarray:
    """[[u]] = u+ n+ + u- n- at face nodes, shape ``(nF, ng, 2)``."""
    vals, _ = space.face_traces(u)
    return (vals[..., 0] - vals[..., 1])[..., None] * space.face_normals[:, None, :]


def average(space: DGSpace, u: np.ndarray) -> np.ndarray:
    """{u} at face nodes; one-sided on the boundary."""
    vals, _ = space.face_traces(u)
    return space.face_kappa[:, None] * (vals[..., 0] + vals[..., 1])


@dataclass
class DGFunction:
    space: DGSpace
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.space.ndof,):
            raise ValueError(f"expected {self.space.ndof} coefficients, got {self.coeffs.shape}")

    def dump(self) -> str:
        return "\n".join(repr(float(c)) for c in self.coeffs) + "\n"


@dataclass
class AssembledSystem:
    A: sp.csr_matrix
    b: np.ndarray
    theta: int
    eta: float
    y: Optional[np.ndarray] = None
    space: Optional[DGSpace] = field(default=None, repr=False)


def _check_theta(theta):
    if theta not in THETAS:
        raise ValueError(f"theta must be one of {THETAS}, got {theta!r}")


def assemble_ipdg(space: DGSpace, a_eval: Coefficient, theta: int, eta: float,
                  f: Coefficient = default_load, y=None) -> AssembledSystem:
    _check_theta(theta)
    if not eta > 0:
        raise ValueError("penalty must be positive")
    a_vol, a_face = space.coefficient_at_nodes(a_eval)
    A = space.operator(a_vol, a_face, theta, eta)
    return AssembledSystem(A, space.load(f), theta, float(eta),
                           None if y is None else np.asarray(y, dtype=float), space)


def assemble_load(space: DGSpace, f: Coefficient = default_load) -> np.ndarray:
    return space.load(f)


def solve_sparse(A: sp.spmatrix, b: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros_like(b)
    try:
        u = splu(A.tocsc()).solve(b)
    except RuntimeError as exc:
        raise SolveError(f"factorisation failed, possible loss of coercivity: {exc}") from exc
    res = np.linalg.norm(A @ u - b) / bnorm
    if not np.isfinite(res) or res > rtol:
        raise SolveError(f"relative residual {res:.3e} exceeds {rtol:.0e}")
    return u


def solve_system(sys: AssembledSystem) -> DGFunction:
    return DGFunction(sys.space, solve_sparse(sys.A, sys.b))


def dg_norm(space: DGSpace, u, a_eval: Coefficient, eta: float, star: bool = False) -> float:
    """Broken energy norm sum_T ||sqrt(a) grad u||^2 + sum_F eta/h_F ||[[u]]||^2.

    With ``star=True`` the term sum_F h_F/eta ||{a grad u}||^2 is added.
    Evaluated directly from traces, independently of the assembled operator.
    """
    c = u.coeffs if isinstance(u, DGFunction) else np.asarray(u, dtype=float)
    a_vol, a_face = space.coefficient_at_nodes(a_eval)
    U = c.reshape(space.mesh.n_elements, space.nb)
    g = np.einsum("eqbi,eb->eqi", space.vol_grad, U)
    vol = np.sum(space.vol_weights * a_vol * np.einsum("eqi,eqi->eq", g, g))
    vals, grads = space.face_traces(c)
    jmp = vals[..., 0] - vals[..., 1]
    pen = np.sum(eta / space.face_h[:, None] * space.face_weights * jmp ** 2)
    total = vol + pen
    if star:
        avg = space.face_kappa[:, None, None] * a_face[..., None] * (grads[:, :, 0] + grads[:, :, 1])
        total += np.sum(space.face_h[:, None] / eta * space.face_weights * np.einsum("fgi,fgi->fg", avg, avg))
    return float(math.sqrt(max(total, 0.0)))


def l2_error(space: DGSpace, u, v=None, quad_order: Optional[int] = None) -> float:
    """||u - v||_{L2(D)}; ``v`` may be a DGFunction on the same space, a callable, or None (zero)."""
    cu = u.coeffs if isinstance(u, DGFunction) else np.asarray(u, dtype=float)
    if isinstance(v, DGFunction):
        if v.space is not space:
            raise ValueError("functions live on different spaces")
        return float(math.sqrt(max(space.mass_norm_sq(cu - v.coeffs), 0.0)))
    if v is None:
        return float(math.sqrt(max(space.mass_norm_sq(cu), 0.0)))
    order = quad_order or max(space.quad_order, 12)
    xi, w = triangle_rule(order)
    m = space.mesh
    P = m.vertices[m.elements]
    J = np.stack([P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]], axis=-1)
    x = P[:, 0][:, None, :] + np.einsum("eij,qj->eqi", J, xi)
    uh = lagrange_basis(xi, space.degree) @ cu.reshape(m.n_elements, space.nb).T
    diff = uh.T - _evaluate(v, x)
    return float(math.sqrt(np.sum(w[None, :] * np.abs(np.linalg.det(J))[:, None] * diff ** 2)))


def dg_error(space: DGSpace, u, exact: Callable, exact_grad: Callable,
             a_eval: Coefficient, eta: float, quad_order: Optional[int] = None) -> float:
    """V_h norm of u - exact for an exact solution that is continuous and vanishes on the boundary."""
    cu = u.coeffs if isinstance(u, DGFunction) else np.asarray(u, dtype=float)
    order = quad_order or max(space.quad_order, 12)
    xi, w = triangle_rule(order)
    m = space.mesh
    P = m.vertices[m.elements]
    J = np.stack([P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]], axis=-1)
    x = P[:, 0][:, None, :] + np.einsum("eij,qj->eqi", J, xi)
    grad_ref = lagrange_grads(xi, space.degree)
    g = np.einsum("qbd,edi,eb->eqi", grad_ref, np.linalg.inv(J), cu.reshape(m.n_elements, space.nb))
    d = g - np.asarray(exact_grad(x))
    vol = np.sum(w[None, :] * np.abs(np.linalg.det(J))[:, None] * _evaluate(a_eval, x)
                 * np.einsum("eqi,eqi->eq", d, d))
    vals, _ = space.face_traces(cu)
    jmp = vals[..., 0] - vals[..., 1]  # the exact solution has no jumps
    pen = np.sum(eta / space.face_h[:, None] * space.face_weights * jmp ** 2)
    return float(math.sqrt(vol + pen))


def discrete_poincare_constant(space: DGSpace) -> float:
    """Smallest sigma with ||v||_L2 <= sigma ||v||_dG for all v in the space.

    ||.||_dG is the energy norm with unit coefficient and unit penalty; the
    value comes from a dense generalised eigenproblem, so keep meshes small.
    """
    from scipy.linalg import eigh

    a_vol = np.ones(space.vol_points.shape[:-1])
    a_face = np.ones(space.face_points.shape[:-1])
    N = space.operator(a_vol, a_face, NIPG, 1.0).toarray()
    N = 0.5 * (N + N.T)
    M = space.mass_matrix().toarray()
    lam = eigh(N, M, eigvals_only=True, subset_by_index=[0, 0])[0]
    return float(1.0 / math.sqrt(lam))


# -- penalty policy ------------------------------------------------------

def penalty_threshold(a_min: float, a_max: float, theta: int, c_tr: float,
                      tau: float = 1.0, n_faces: int = 3) -> float:
    """tau a_max^2 C_tr^2 N (theta - 1)^2 / (4 a_min)."""
    return tau * a_max ** 2 * c_tr ** 2 * n_faces * (theta - 1) ** 2 / (4.0 * a_min)


def penalty_value(spec: RandomFieldSpec, y=None, theta: int = NIPG, override: Optional[float] = None,
                  c_tr: Optional[float] = None, tau: float = 1.0, n_faces: int = 3) -> float:
    """Penalty eta(y).

    Affine: a_max^2 / a_min, independent of y. Lognormal:
    max(exp(3 sum beta_j |y_j|), min(a0) exp(-sum beta_j |y_j|)).
    A positive ``override`` replaces the analytic value. When ``c_tr`` is
    given and theta != 1, a :class:`PenaltyWarning` flags values below the
    coercivity threshold.
    """
    _check_theta(theta)
    if override is not None:
        if not override > 0:
            raise ValueError(f"penalty override must be positive, got {override!r}")
        eta = float(override)
    elif spec.mode == AFFINE:
        a_min, a_max = coefficient_bounds(spec)
        eta = a_max ** 2 / a_min
    else:
        yv = np.zeros(spec.s) if y is None else np.asarray(y, dtype=float)
        t = float(np.abs(yv) @ spec.amplitudes)
        eta = max(math.exp(3.0 * t), spec.a0_range[0] * math.exp(-t))
    if c_tr is not None and theta != NIPG:
        a_min, a_max = coefficient_bounds(spec, None if spec.mode == AFFINE else
                                          (np.zeros(spec.s) if y is None else y))
        thr = penalty_threshold(a_min, a_max, theta, c_tr, tau, n_faces)
        if eta < thr:
            warnings.warn(f"penalty {eta:.4g} is below the coercivity threshold {thr:.4g} "
                          f"for theta={theta}", PenaltyWarning, stacklevel=2)
    return eta


# -- conforming P1 comparator ----------------------------------------------

class P1Space:
    """Continuous piecewise linear space with homogeneous Dirichlet data."""

    def __init__(self, mesh: Mesh, quad_order: int = 4):
        self.mesh = mesh
        nV = len(mesh.vertices)
        bverts = np.unique(mesh.face_table.vertices[mesh.boundary_mask])
        self.interior = np.setdiff1d(np.arange(nV), bverts)
        self._free = np.full(nV, -1, dtype=np.int64)
        self._free[self.interior] = np.arange(len(self.interior))
        self.nfree = len(self.interior)

        P = mesh.vertices[mesh.elements]
        J = np.stack([P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]], axis=-1)
        invJ = np.linalg.inv(J)
        detJ = np.abs(np.linalg.det(J))
        xi, w = triangle_rule(quad_order)
        self.vol_points = P[:, 0][:, None, :] + np.einsum("eij,qj->eqi", J, xi)
        self.vol_weights = w[None, :] * detJ[:, None]
        self.vol_phi = lagrange_basis(xi, 1)
        grad = np.einsum("bd,edi->ebi", lagrange_grads(xi[:1], 1)[0], invJ)
        self._K = np.einsum("eq,eid,ejd->eqij", self.vol_weights, grad, grad)
        self._M_blocks = np.einsum("eq,qi,qj->eij", self.vol_weights, self.vol_phi, self.vol_phi)

        el = self._free[mesh.elements]
        r = np.broadcast_to(el[:, :, None], (len(el), 3, 3))
        c = np.broadcast_to(el[:, None, :], (len(el), 3, 3))
        keep = (r >= 0) & (c >= 0)
        self._keep = keep.ravel()
        self._indptr, self._indices, self._coo_to_csr = _csr_pattern(r[keep], c[keep], self.nfree)

    @property
    def ndof(self) -> int:
        return len(self.mesh.vertices)

    def operator(self, a_vol: np.ndarray) -> sp.csr_matrix:
        blocks = np.einsum("eq,eqij->eij", a_vol, self._K).ravel()[self._keep]
        data = np.bincount(self._coo_to_csr, weights=blocks, minlength=len(self._indices))
        return sp.csr_matrix((data, self._indices, self._indptr), shape=(self.nfree, self.nfree))

    def load(self, f: Coefficient = default_load) -> np.ndarray:
        fv = _evaluate(f, self.vol_points)
        be = np.einsum("eq,eq,qi->ei", self.vol_weights, fv, self.vol_phi)
        b = np.zeros(self.ndof)
        np.add.at(b, self.mesh.elements, be)
        return b[self.interior]

    def expand(self, u_free: np.ndarray) -> np.ndarray:
        u = np.zeros(self.ndof)
        u[self.interior] = u_free
        return u

    def mass_norm_sq(self, U: np.ndarray) -> np.ndarray:
        V = np.asarray(U)[..., self.mesh.elements]
        return np.einsum("...ei,eij,...ej->...", V, self._M_blocks, V)

    def l2_error(self, u: np.ndarray, exact: Coefficient, quad_order: int = 12) -> float:
        m = self.mesh
        xi, w = triangle_rule(quad_order)
        P = m.vertices[m.elements]
        J = np.stack([P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]], axis=-1)
        x = P[:, 0][:, None, :] + np.einsum("eij,qj->eqi", J, xi)
        uh = np.einsum("qb,eb->eq", lagrange_basis(xi, 1), np.asarray(u)[m.elements])
        diff = uh - _evaluate(exact, x)
        return float(math.sqrt(np.sum(w[None, :] * np.abs(np.linalg.det(J))[:, None] * diff ** 2)))


def solve_conforming_p1(m: int, a_eval: Coefficient = 1.0, f: Coefficient = default_load) -> np.ndarray:
    """Nodal values of the continuous P1 solution on the structured m x m mesh."""
    from .mesh import build_structured_mesh

    space = P1Space(build_structured_mesh(m))
    a_vol = _evaluate(a_eval, space.vol_points)
    _check_positive(a_vol)
    return space.expand(solve_sparse(space.operator(a_vol), space.load(f)))
