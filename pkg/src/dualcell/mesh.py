"""Tetrahedral meshes: loading, validation and edge/face topology.

Two input formats are understood:

* Gmsh MSH 2.2 ASCII (``$Nodes`` / ``$Elements``, element type 4 only; the
  first tag, the physical group, becomes the region id).
* A minimal text format::

      vertices N
      x y z            (N lines)
      tets M
      v0 v1 v2 v3 region   (M lines, 0-based vertex indices)

Edges and faces are identified by their sorted global vertex tuples, so the
topology does not depend on the order in which tets are listed.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, field

import numpy as np

# local vertex pairs / triples of a tet; face l is opposite local vertex l
LOCAL_EDGES = np.array([(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)])
LOCAL_FACES = np.array([(1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2)])

DEGENERACY_TOL = 1e-14


class MeshError(ValueError):
    """Raised for unreadable or invalid meshes."""


def signed_volumes(vertices: np.ndarray, tets: np.ndarray) -> np.ndarray:
    p = vertices[tets]
    a = p[:, 1] - p[:, 0]
    b = p[:, 2] - p[:, 0]
    c = p[:, 3] - p[:, 0]
    return np.einsum("ij,ij->i", a, np.cross(b, c)) / 6.0


@dataclass(frozen=True)
class PrimalMesh:
    """Vertices, positively oriented tets and a region id per tet."""

    vertices: np.ndarray
    tets: np.ndarray
    regions: np.ndarray

    @classmethod
    def from_arrays(cls, vertices, tets, regions=None) -> "PrimalMesh":
        """Validate raw arrays and fix the orientation of every tet.

        Raises:
            MeshError: dangling vertex index, degenerate tet or duplicate tet.
        """
        vertices = np.ascontiguousarray(vertices, dtype=float)
        tets = np.array(tets, dtype=np.int64).reshape(-1, 4)
        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise MeshError("vertices must be an (n, 3) array")
        if regions is None:
            regions = np.zeros(len(tets), dtype=np.int64)
        regions = np.asarray(regions, dtype=np.int64).reshape(-1)
        if len(regions) != len(tets):
            raise MeshError("one region id per tet is required")
        if len(tets) == 0:
            raise MeshError("mesh has no tets")
        bad = (tets < 0) | (tets >= len(vertices))
        if bad.any():
            t = int(np.nonzero(bad.any(axis=1))[0][0])
            raise MeshError(f"dangling vertex reference in tet {t}: {tets[t].tolist()}")
        if (np.sort(tets, axis=1)[:, 1:] == np.sort(tets, axis=1)[:, :-1]).any():
            raise MeshError("tet with repeated vertex")
        vol = signed_volumes(vertices, tets)
        extent = np.ptp(vertices[np.unique(tets)], axis=0).max()
        small = np.abs(vol) < DEGENERACY_TOL * extent**3
        if small.any():
            t = int(np.nonzero(small)[0][0])
            raise MeshError(f"degenerate (zero-volume) tet {t}")
        tets = tets.copy()
        neg = vol < 0
        tets[neg, 2], tets[neg, 3] = tets[neg, 3].copy(), tets[neg, 2].copy()
        keys = np.sort(tets, axis=1)
        if len(np.unique(keys, axis=0)) != len(keys):
            raise MeshError("duplicate tet")
        return cls(vertices=vertices, tets=tets, regions=regions)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_tets(self) -> int:
        return len(self.tets)

    def volumes(self) -> np.ndarray:
        return signed_volumes(self.vertices, self.tets)

    def with_vertices(self, vertices) -> "PrimalMesh":
        """Same connectivity with moved vertices (orientation is re-checked)."""
        return PrimalMesh.from_arrays(vertices, self.tets, self.regions)

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def hash(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for arr in (self.vertices, self.tets, self.regions):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class TopologyTables:
    """Edge and face enumeration with incidence and boundary flags."""

    edges: np.ndarray
    faces: np.ndarray
    tet_edges: np.ndarray
    tet_faces: np.ndarray
    face_tets: np.ndarray
    boundary_face: np.ndarray
    boundary_edge: np.ndarray
    boundary_vertex: np.ndarray
    _edge_index: dict = field(repr=False, compare=False, default_factory=dict)
    _face_index: dict = field(repr=False, compare=False, default_factory=dict)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def edge_id(self, a: int, b: int) -> int:
        return self._edge_index[(min(a, b), max(a, b))]

    def face_id(self, a: int, b: int, c: int) -> int:
        return self._face_index[tuple(sorted((a, b, c)))]

    def edge_ids(self, pairs: np.ndarray) -> np.ndarray:
        """Vectorised lookup of edge ids for an ``(n, 2)`` array of vertex pairs."""
        return _lookup_rows(self.edges, np.sort(pairs, axis=1))

    def face_ids(self, triples: np.ndarray) -> np.ndarray:
        """Vectorised lookup of face ids for an ``(n, 3)`` array of vertex triples."""
        return _lookup_rows(self.faces, np.sort(triples, axis=1))


def _row_keys(rows: np.ndarray, base: int) -> np.ndarray:
    keys = np.zeros(len(rows), dtype=np.int64)
    for c in range(rows.shape[1]):
        keys = keys * base + rows[:, c]
    return keys


def _lookup_rows(table: np.ndarray, rows: np.ndarray) -> np.ndarray:
    base = int(max(table.max(), rows.max())) + 1
    tk = _row_keys(table, base)
    rk = _row_keys(rows, base)
    pos = np.searchsorted(tk, rk)
    pos = np.minimum(pos, len(tk) - 1)
    if not np.array_equal(tk[pos], rk):
        raise KeyError("entity not present in topology")
    return pos


def build_topology(mesh: PrimalMesh) -> TopologyTables:
    """Enumerate edges and faces of the mesh.

    Raises:
        MeshError: a face shared by more than two tets.
    """
    tets = mesh.tets
    nt = len(tets)
    all_edges = np.sort(tets[:, LOCAL_EDGES], axis=2).reshape(-1, 2)
    edges, e_inv = np.unique(all_edges, axis=0, return_inverse=True)
    tet_edges = e_inv.reshape(nt, 6)

    all_faces = np.sort(tets[:, LOCAL_FACES], axis=2).reshape(-1, 3)
    faces, f_inv = np.unique(all_faces, axis=0, return_inverse=True)
    tet_faces = f_inv.reshape(nt, 4)

    counts = np.bincount(f_inv, minlength=len(faces))
    if (counts > 2).any():
        f = int(np.nonzero(counts > 2)[0][0])
        raise MeshError(f"non-manifold face {faces[f].tolist()} shared by {counts[f]} tets")
    face_tets = -np.ones((len(faces), 2), dtype=np.int64)
    order = np.argsort(f_inv, kind="stable")
    owner = np.repeat(np.arange(nt), 4)[order]
    sorted_f = f_inv[order]
    first = np.ones(len(sorted_f), dtype=bool)
    first[1:] = sorted_f[1:] != sorted_f[:-1]
    face_tets[sorted_f[first], 0] = owner[first]
    face_tets[sorted_f[~first], 1] = owner[~first]

    boundary_face = counts == 1
    bverts = np.zeros(mesh.n_vertices, dtype=bool)
    bverts[faces[boundary_face].ravel()] = True
    bfaces = faces[boundary_face]
    bedge_rows = np.sort(bfaces[:, [[0, 1], [0, 2], [1, 2]]], axis=2).reshape(-1, 2)
    boundary_edge = np.zeros(len(edges), dtype=bool)
    if len(bedge_rows):
        boundary_edge[_lookup_rows(edges, bedge_rows)] = True

    edge_index = {(int(a), int(b)): i for i, (a, b) in enumerate(edges)}
    face_index = {tuple(int(v) for v in f): i for i, f in enumerate(faces)}
    return TopologyTables(
        edges=edges,
        faces=faces,
        tet_edges=tet_edges,
        tet_faces=tet_faces,
        face_tets=face_tets,
        boundary_face=boundary_face,
        boundary_edge=boundary_edge,
        boundary_vertex=bverts,
        _edge_index=edge_index,
        _face_index=face_index,
    )


def euler_characteristic(mesh: PrimalMesh, topo: TopologyTables) -> int:
    return mesh.n_vertices - topo.n_edges + topo.n_faces - mesh.n_tets


# --------------------------------------------------------------------------
# readers / writers


def _parse_gmsh(lines: list[str]) -> PrimalMesh:
    def block(name):
        try:
            start = lines.index(f"${name}")
            end = lines.index(f"$End{name}")
        except ValueError:
            raise MeshError(f"missing ${name} block") from None
        return lines[start + 1 : end]

    if "$MeshFormat" in lines:
        fmt = block("MeshFormat")
        if not fmt or not fmt[0].split()[0].startswith("2"):
            raise MeshError("only MSH 2.x ASCII is supported")
        if len(fmt[0].split()) > 1 and fmt[0].split()[1] != "0":
            raise MeshError("binary MSH files are not supported")
    nodes = block("Nodes")
    try:
        nn = int(nodes[0])
        tags = []
        coords = []
        for ln in nodes[1 : nn + 1]:
            parts = ln.split()
            tags.append(int(parts[0]))
            coords.append([float(v) for v in parts[1:4]])
    except (ValueError, IndexError) as exc:
        raise MeshError(f"cannot parse $Nodes block: {exc}") from None
    if len(coords) != nn:
        raise MeshError("truncated $Nodes block")
    tag_to_index = {t: i for i, t in enumerate(tags)}
    elems = block("Elements")
    tets = []
    regions = []
    try:
        ne = int(elems[0])
        for ln in elems[1 : ne + 1]:
            parts = [int(v) for v in ln.split()]
            if parts[1] != 4:
                continue
            ntags = parts[2]
            region = parts[3] if ntags > 0 else 0
            vids = parts[3 + ntags : 7 + ntags]
            tets.append([tag_to_index.get(v, -1) for v in vids])
            regions.append(region)
    except (ValueError, IndexError) as exc:
        raise MeshError(f"cannot parse $Elements block: {exc}") from None
    return PrimalMesh.from_arrays(np.array(coords), np.array(tets), np.array(regions))


def _parse_simple(lines: list[str]) -> PrimalMesh:
    it = iter(lines)
    try:
        head = next(it).split()
        if head[0] != "vertices":
            raise MeshError("expected 'vertices N'")
        nv = int(head[1])
        verts = [[float(v) for v in next(it).split()[:3]] for _ in range(nv)]
        head = next(it).split()
        if head[0] != "tets":
            raise MeshError("expected 'tets M'")
        nt = int(head[1])
        rows = [[int(v) for v in next(it).split()] for _ in range(nt)]
    except StopIteration:
        raise MeshError("unexpected end of mesh document") from None
    except (ValueError, IndexError) as exc:
        raise MeshError(f"cannot parse mesh document: {exc}") from None
    if any(len(r) < 4 for r in rows):
        raise MeshError("tet line needs four vertex indices")
    tets = np.array([r[:4] for r in rows], dtype=np.int64).reshape(-1, 4)
    regions = np.array([r[4] if len(r) > 4 else 0 for r in rows], dtype=np.int64)
    return PrimalMesh.from_arrays(np.array(verts, dtype=float).reshape(-1, 3), tets, regions)


def parse_mesh(text: str) -> PrimalMesh:
    """Parse a mesh document given as a string (format auto-detected)."""
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise MeshError("empty mesh document")
    if lines[0].startswith("$"):
        return _parse_gmsh(lines)
    return _parse_simple(lines)


def load_mesh(source) -> PrimalMesh:
    """Load a mesh from a path, an open text file or a document string."""
    if isinstance(source, io.IOBase) or hasattr(source, "read"):
        return parse_mesh(source.read())
    if isinstance(source, (str, os.PathLike)) and os.path.exists(source):
        with open(source, encoding="utf-8") as fh:
            return parse_mesh(fh.read())
    if isinstance(source, str) and "\n" in source:
        return parse_mesh(source)
    raise MeshError(f"mesh source not found: {source!r}")


def format_simple(mesh: PrimalMesh) -> str:
    """Serialise to the minimal text format (coordinates round-trip exactly)."""
    out = [f"vertices {mesh.n_vertices}"]
    out += [" ".join(repr(float(c)) for c in v) for v in mesh.vertices]
    out.append(f"tets {mesh.n_tets}")
    out += [f"{a} {b} {c} {d} {r}" for (a, b, c, d), r in zip(mesh.tets.tolist(), mesh.regions.tolist())]
    return "\n".join(out) + "\n"


def format_gmsh(mesh: PrimalMesh) -> str:
    """Serialise to MSH 2.2 ASCII with 1-based node tags."""
    out = ["$MeshFormat", "2.2 0 8", "$EndMeshFormat", "$Nodes", str(mesh.n_vertices)]
    out += [f"{i + 1} " + " ".join(repr(float(c)) for c in v) for i, v in enumerate(mesh.vertices)]
    out += ["$EndNodes", "$Elements", str(mesh.n_tets)]
    for i, (t, r) in enumerate(zip(mesh.tets.tolist(), mesh.regions.tolist())):
        out.append(f"{i + 1} 4 2 {r} {r} " + " ".join(str(v + 1) for v in t))
    out.append("$EndElements")
    return "\n".join(out) + "\n"
