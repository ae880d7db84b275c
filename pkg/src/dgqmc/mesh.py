"""Conforming triangulations of the unit square with face topology."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

N_BOUNDARY_FACES = 3  # faces per triangle


class NonManifoldError(ValueError):
    pass


@dataclass(frozen=True)
class Face:
    vertices: tuple[int, int]
    h: float
    plus: int
    minus: Optional[int]
    normal: tuple[float, float]

    @property
    def on_boundary(self) -> bool:
        return self.minus is None


@dataclass(frozen=True, eq=False)
class FaceTable:
    """Array form of the face list.

    ``elements[f] = (plus, minus)`` with ``minus == -1`` on the boundary and
    ``local[f] = (edge index in plus, edge index in minus)``. Local edge ``e``
    of a triangle ``(v0, v1, v2)`` joins ``v[e]`` and ``v[(e + 1) % 3]``.
    """

    vertices: np.ndarray
    elements: np.ndarray
    local: np.ndarray

    def __len__(self):
        return len(self.vertices)


def enumerate_faces(elements: np.ndarray) -> FaceTable:
    """List every undirected edge once, in order of first appearance."""
    elements = np.asarray(elements, dtype=np.int64)
    seen_elems = set()
    for t in elements:
        key = tuple(sorted(int(v) for v in t))
        if key in seen_elems:
            raise NonManifoldError(f"duplicate element {key}")
        seen_elems.add(key)

    index: dict[tuple[int, int], int] = {}
    verts, adj, loc = [], [], []
    for e, tri in enumerate(elements):
        for i in range(3):
            a, b = int(tri[i]), int(tri[(i + 1) % 3])
            key = (a, b) if a < b else (b, a)
            f = index.get(key)
            if f is None:
                index[key] = len(verts)
                verts.append(key)
                adj.append([e, -1])
                loc.append([i, -1])
            elif adj[f][1] == -1:
                adj[f][1] = e
                loc[f][1] = i
            else:
                raise NonManifoldError(f"face {key} shared by more than two elements")
    return FaceTable(np.array(verts, dtype=np.int64).reshape(-1, 2),
                     np.array(adj, dtype=np.int64).reshape(-1, 2),
                     np.array(loc, dtype=np.int64).reshape(-1, 2))


class Mesh:
    """Triangle mesh with per-face geometry.

    Elements are reoriented counter-clockwise. Degenerate (zero-area)
    elements are accepted here and reported by :func:`mesh_quality_report`;
    the DG space refuses them.
    """

    n_boundary_faces = N_BOUNDARY_FACES

    def __init__(self, vertices, elements):
        self.vertices = np.asarray(vertices, dtype=float)
        elements = np.array(elements, dtype=np.int64)
        if elements.ndim != 2 or elements.shape[1] != 3:
            raise ValueError("elements must be an (N, 3) index array")
        p = self.vertices[elements]
        signed = 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                        - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))
        flip = signed < 0
        elements[flip] = elements[flip][:, [0, 2, 1]]
        self.elements = elements
        self.areas = np.abs(signed)

        self.face_table = enumerate_faces(elements)
        fv = self.vertices[self.face_table.vertices]
        d = fv[:, 1] - fv[:, 0]
        self.face_lengths = np.hypot(d[:, 0], d[:, 1])
        with np.errstate(invalid="ignore", divide="ignore"):
            nrm = np.column_stack([d[:, 1], -d[:, 0]]) / self.face_lengths[:, None]
        # orient outward from the plus element
        plus = self.face_table.elements[:, 0]
        centroid = self.vertices[elements[plus]].mean(axis=1)
        mid = fv.mean(axis=1)
        sign = np.sign(np.einsum("ij,ij->i", mid - centroid, nrm))
        sign[sign == 0] = 1.0
        self.face_normals = nrm * sign[:, None]

        edges = p[:, [1, 2, 0]] - p  # local edge i runs v_i -> v_{i+1}
        self.edge_lengths = np.hypot(edges[..., 0], edges[..., 1])
        self.diameters = self.edge_lengths.max(axis=1)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def n_faces(self) -> int:
        return len(self.face_table)

    @property
    def boundary_mask(self) -> np.ndarray:
        return self.face_table.elements[:, 1] < 0

    @property
    def h(self) -> float:
        return float(self.diameters.max())

    @property
    def faces(self) -> list[Face]:
        ft = self.face_table
        return [Face(tuple(int(v) for v in ft.vertices[f]), float(self.face_lengths[f]),
                     int(ft.elements[f, 0]),
                     None if ft.elements[f, 1] < 0 else int(ft.elements[f, 1]),
                     tuple(float(c) for c in self.face_normals[f]))
                for f in range(self.n_faces)]

    def dump(self) -> str:
        """Plain-text listing of vertices, elements and faces."""
        lines = [f"vertices {len(self.vertices)}"]
        lines += [f"{x!r} {y!r}" for x, y in self.vertices]
        lines.append(f"elements {self.n_elements}")
        lines += [" ".join(str(int(v)) for v in t) for t in self.elements]
        lines.append(f"faces {self.n_faces}")
        ft = self.face_table
        for f in range(self.n_faces):
            a, b = ft.vertices[f]
            p, m = ft.elements[f]
            lines.append(f"{a} {b} {p} {m} {self.face_lengths[f]!r}")
        return "\n".join(lines) + "\n"


def build_structured_mesh(m: int) -> Mesh:
    """Uniform m x m grid of squares, each cut along its bottom-left to top-right diagonal."""
    if int(m) != m or m < 1:
        raise ValueError(f"mesh divisions must be a positive integer, got {m!r}")
    m = int(m)
    g = np.linspace(0.0, 1.0, m + 1)
    X, Y = np.meshgrid(g, g)
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    j, i = np.divmod(np.arange(m * m), m)
    v00 = j * (m + 1) + i
    v10 = v00 + 1
    v01 = v00 + m + 1
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    elements = np.stack([lower, upper], axis=1).reshape(-1, 3)
    return Mesh(vertices, elements)


@dataclass(frozen=True)
class QualityReport:
    min_angle: float        # degrees
    max_diameter_ratio: float  # max over element/face pairs of h_T / h_F
    min_area: float
    ok: bool


def mesh_quality_report(mesh: Mesh, area_tol: float = 1e-14) -> QualityReport:
    p = mesh.vertices[mesh.elements]
    angles = []
    for i in range(3):
        u = p[:, (i + 1) % 3] - p[:, i]
        v = p[:, (i + 2) % 3] - p[:, i]
        nu = np.hypot(u[:, 0], u[:, 1])
        nv = np.hypot(v[:, 0], v[:, 1])
        with np.errstate(invalid="ignore", divide="ignore"):
            c = np.einsum("ij,ij->i", u, v) / (nu * nv)
        angles.append(np.degrees(np.arccos(np.clip(np.nan_to_num(c, nan=1.0), -1, 1))))
    min_angle = float(np.min(angles))
    with np.errstate(divide="ignore"):
        ratio = mesh.diameters[:, None] / mesh.edge_lengths
    max_ratio = float(np.max(ratio))
    min_area = float(mesh.areas.min())
    ok = bool(min_area > area_tol * max(mesh.h, 1.0) ** 2 and min_angle > 0 and np.isfinite(max_ratio))
    return QualityReport(min_angle, max_ratio, min_area, ok)
