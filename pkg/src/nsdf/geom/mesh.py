"""Triangle meshes: container, cleanup, connectivity, OBJ and binary PLY I/O."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

DEGENERATE_AREA = 1e-12


@dataclass
class TriangleMesh:
    vertices: np.ndarray                 # (V, 3) float64
    triangles: np.ndarray                # (M, 3) int64
    visible: np.ndarray | None = None    # (M,) bool, set by visibility marking

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.triangles.size and (self.triangles.min() < 0 or
                                    self.triangles.max() >= len(self.vertices)):
            raise ValueError("triangle indices out of range")
        if self.visible is not None:
            self.visible = np.asarray(self.visible, dtype=bool)
            if self.visible.shape != (len(self.triangles),):
                raise ValueError("visible flags must be per-triangle")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def corners(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (self.vertices[self.triangles[:, 0]],
                self.vertices[self.triangles[:, 1]],
                self.vertices[self.triangles[:, 2]])

    def areas(self) -> np.ndarray:
        v0, v1, v2 = self.corners()
        return 0.5 * np.linalg.norm(np.cross(v1 - v0, v2 - v0), axis=1)

    def area(self) -> float:
        return float(self.areas().sum())

    def centroids(self) -> np.ndarray:
        v0, v1, v2 = self.corners()
        return (v0 + v1 + v2) / 3.0

    def face_normals(self, normalized: bool = True) -> np.ndarray:
        v0, v1, v2 = self.corners()
        n = np.cross(v1 - v0, v2 - v0)
        if normalized:
            n = n / np.linalg.norm(n, axis=1, keepdims=True).clip(min=1e-30)
        return n

    def cleanup(self) -> "TriangleMesh":
        """Drop degenerate triangles (area <= 1e-12) and unreferenced vertices."""
        keep = self.areas() > DEGENERATE_AREA
        tris = self.triangles[keep]
        used = np.zeros(len(self.vertices), dtype=bool)
        used[tris.ravel()] = True
        remap = np.cumsum(used) - 1
        vis = self.visible[keep] if self.visible is not None else None
        return TriangleMesh(self.vertices[used], remap[tris], vis)

    def transformed(self, scale: float, translation: np.ndarray) -> "TriangleMesh":
        """Similarity transform p -> (p + translation) * scale."""
        return TriangleMesh((self.vertices + translation) * scale, self.triangles.copy(),
                            None if self.visible is None else self.visible.copy())

    def component_labels(self) -> np.ndarray:
        """Per-triangle connected-component labels (triangles sharing a vertex connect)."""
        if self.n_triangles == 0:
            return np.zeros(0, dtype=np.int64)
        rows = np.concatenate([self.triangles[:, 0], self.triangles[:, 1], self.triangles[:, 2]])
        cols = np.concatenate([self.triangles[:, 1], self.triangles[:, 2], self.triangles[:, 0]])
        g = sparse.coo_matrix((np.ones(len(rows)), (rows, cols)),
                              shape=(self.n_vertices, self.n_vertices))
        _, vlabels = connected_components(g, directed=False)
        return vlabels[self.triangles[:, 0]]


def largest_component(mesh: TriangleMesh) -> TriangleMesh:
    """Keep the component with the most triangles (ties: larger area, then
    lowest vertex index)."""
    if mesh.n_triangles == 0:
        return mesh
    labels = mesh.component_labels()
    uniq = np.unique(labels)
    if len(uniq) == 1:
        return mesh
    areas = mesh.areas()
    best = None
    best_key = None
    for lab in uniq:
        sel = labels == lab
        key = (int(sel.sum()), float(areas[sel].sum()), -int(mesh.triangles[sel].min()))
        if best_key is None or key > best_key:
            best, best_key = sel, key
    vis = mesh.visible[best] if mesh.visible is not None else None
    return TriangleMesh(mesh.vertices, mesh.triangles[best], vis).cleanup()


# ---------------------------------------------------------------------------
# I/O


def write_obj(path, mesh: TriangleMesh) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for t in mesh.triangles:
            fh.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")


def read_obj(path) -> TriangleMesh:
    verts, tris = [], []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
                for k in range(1, len(idx) - 1):
                    tris.append([idx[0], idx[k], idx[k + 1]])
    return TriangleMesh(np.array(verts, dtype=np.float64).reshape(-1, 3),
                        np.array(tris, dtype=np.int64).reshape(-1, 3))


def write_ply(path, mesh: TriangleMesh) -> None:
    """Binary little-endian PLY with double-precision vertices."""
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {mesh.n_vertices}\n"
        "property double x\nproperty double y\nproperty double z\n"
        f"element face {mesh.n_triangles}\n"
        "property list uchar int vertex_indices\n"
        "end_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(mesh.vertices.astype("<f8").tobytes())
        if mesh.n_triangles:
            face = np.empty(mesh.n_triangles, dtype=[("n", "u1"), ("idx", "<i4", (3,))])
            face["n"] = 3
            face["idx"] = mesh.triangles.astype("<i4")
            fh.write(face.tobytes())


def read_ply(path) -> TriangleMesh:
    data = Path(path).read_bytes()
    end = data.find(b"end_header\n")
    if end < 0:
        raise ValueError(f"{path}: not a PLY file")
    header = data[:end].decode("ascii").splitlines()
    if header[1] != "format binary_little_endian 1.0":
        raise ValueError(f"{path}: only binary little-endian PLY is supported")
    n_vert = n_face = 0
    vert_props: list[str] = []
    section = None
    for line in header:
        parts = line.split()
        if parts[:2] == ["element", "vertex"]:
            n_vert, section = int(parts[2]), "vertex"
        elif parts[:2] == ["element", "face"]:
            n_face, section = int(parts[2]), "face"
        elif parts and parts[0] == "property" and section == "vertex":
            vert_props.append(parts[1])
    offset = end + len(b"end_header\n")
    vdtype = {"double": "<f8", "float": "<f4"}.get(vert_props[0] if vert_props else "double")
    if vdtype is None:
        raise ValueError(f"{path}: unsupported vertex type {vert_props[0]}")
    itemsize = 8 if vdtype == "<f8" else 4
    verts = np.frombuffer(data, dtype=vdtype, count=n_vert * len(vert_props),
                          offset=offset).reshape(n_vert, len(vert_props))[:, :3]
    offset += n_vert * len(vert_props) * itemsize
    face = np.frombuffer(data, dtype=[("n", "u1"), ("idx", "<i4", (3,))], count=n_face,
                         offset=offset)
    if n_face and not np.all(face["n"] == 3):
        raise ValueError(f"{path}: non-triangle faces present")
    return TriangleMesh(verts.astype(np.float64),
                        face["idx"].astype(np.int64).reshape(-1, 3))


def save_mesh(path, mesh: TriangleMesh) -> None:
    path = Path(path)
    if path.suffix.lower() == ".obj":
        write_obj(path, mesh)
    elif path.suffix.lower() == ".ply":
        write_ply(path, mesh)
    else:
        raise ValueError(f"unsupported mesh format {path.suffix!r}")


def load_mesh(path) -> TriangleMesh:
    path = Path(path)
    if path.suffix.lower() == ".obj":
        return read_obj(path)
    if path.suffix.lower() == ".ply":
        return read_ply(path)
    raise ValueError(f"unsupported mesh format {path.suffix!r}")
