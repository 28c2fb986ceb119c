"""Simplicial meshes of reference building blocks.

Tubes are structured triangulations of ``[0, L] x [-1/2, 1/2]``. The
bifurcation is a symmetric Y assembled from bilinearly mapped quadrilateral
patches whose shared edges carry identical node distributions.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np


class BlockKind(enum.Enum):
    """Reference building blocks: straight tubes of aspect ratio 1, 2, 3 and a bifurcation."""

    T1 = "T1"
    T2 = "T2"
    T3 = "T3"
    B = "B"

    @property
    def is_tube(self) -> bool:
        return self is not BlockKind.B

    @property
    def length(self) -> float:
        """Reference tube length (the diameter is 1)."""
        if self is BlockKind.B:
            raise ValueError("the bifurcation has no single length")
        return float(int(self.value[1]))

    @property
    def n_outlets(self) -> int:
        return 2 if self is BlockKind.B else 1

    @classmethod
    def parse(cls, name: "str | BlockKind") -> "BlockKind":
        if isinstance(name, BlockKind):
            return name
        try:
            return cls(str(name).upper())
        except ValueError:
            raise ValueError(f"unknown block kind {name!r}") from None


class FacetKind(enum.Enum):
    WALL = "wall"
    INLET = "inlet"
    OUTLET = "outlet"
    INTERFACE = "interface"


@dataclass(frozen=True)
class FacetTag:
    """Boundary label: a kind and the port ordinal within the block."""

    kind: FacetKind
    index: int = 0

    def __post_init__(self):
        if self.index < 0:
            raise ValueError("facet tag index must be nonnegative")

    def __str__(self) -> str:
        return f"{self.kind.value}:{self.index}"

    def sort_key(self) -> tuple[int, int]:
        return (list(FacetKind).index(self.kind), self.index)

    @classmethod
    def parse(cls, text: str) -> "FacetTag":
        kind, _, index = text.partition(":")
        return cls(FacetKind(kind), int(index or 0))


WALL = FacetTag(FacetKind.WALL, 0)


def inlet(i: int = 0) -> FacetTag:
    return FacetTag(FacetKind.INLET, i)


def outlet(i: int = 0) -> FacetTag:
    return FacetTag(FacetKind.OUTLET, i)


@dataclass(frozen=True)
class ReferencePort:
    """A straight port segment of a reference block in 2D.

    ``start`` and ``end`` are ordered so that rotating ``end - start`` by
    -90 degrees gives the outward normal.
    """

    tag: FacetTag
    start: np.ndarray
    end: np.ndarray

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.start + self.end)

    @property
    def width(self) -> float:
        return float(np.linalg.norm(self.end - self.start))

    @property
    def normal(self) -> np.ndarray:
        t = (self.end - self.start) / self.width
        return np.array([t[1], -t[0]])


def _signed_volumes(vertices: np.ndarray, cells: np.ndarray) -> np.ndarray:
    x0 = vertices[cells[:, 0]]
    edges = vertices[cells[:, 1:]] - x0[:, None, :]
    d = vertices.shape[1]
    return np.linalg.det(edges.transpose(0, 2, 1)) / math.factorial(d)


@dataclass
class SimplicialMesh:
    """Conforming simplicial mesh with tagged boundary facets.

    Attributes
    ----------
    vertices : ndarray, shape (nv, d)
    cells : ndarray, shape (nc, d + 1)
        Vertex indices, positively oriented.
    facet_tags : dict
        Sorted vertex tuple of each boundary facet mapped to its ``FacetTag``.
    ports : dict
        Straight port segments by tag (2D blocks only).
    """

    vertices: np.ndarray
    cells: np.ndarray
    facet_tags: dict[tuple[int, ...], FacetTag]
    ports: dict[FacetTag, ReferencePort] = field(default_factory=dict)
    kind: BlockKind | None = None

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float)
        self.cells = np.ascontiguousarray(self.cells, dtype=np.int64)
        vol = _signed_volumes(self.vertices, self.cells)
        if np.any(np.abs(vol) < 1e-14):
            raise ValueError("degenerate cell with zero volume")
        flip = vol < 0
        if np.any(flip):
            self.cells[flip, 0], self.cells[flip, 1] = (
                self.cells[flip, 1].copy(),
                self.cells[flip, 0].copy(),
            )
        self._check_tags()

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    def cell_volumes(self) -> np.ndarray:
        return _signed_volumes(self.vertices, self.cells)

    def topological_boundary(self) -> set[tuple[int, ...]]:
        """Facets that belong to exactly one cell."""
        count: dict[tuple[int, ...], int] = {}
        for cell in self.cells:
            for f in combinations(sorted(cell.tolist()), self.dim):
                count[f] = count.get(f, 0) + 1
        return {f for f, c in count.items() if c == 1}

    def edges(self) -> np.ndarray:
        """Unique sorted vertex pairs, in order of first appearance."""
        pairs = np.concatenate(
            [np.sort(self.cells[:, [a, b]], axis=1) for a, b in local_edges(self.dim)]
        )
        _, first = np.unique(pairs, axis=0, return_index=True)
        return pairs[np.sort(first)]

    def tags(self) -> list[FacetTag]:
        return sorted(set(self.facet_tags.values()), key=FacetTag.sort_key)

    def boundary_facets(self, tag: FacetTag) -> list[tuple[int, ...]]:
        """All boundary facets carrying ``tag``, sorted.

        Raises
        ------
        KeyError
            If no facet carries the tag.
        """
        found = sorted(f for f, t in self.facet_tags.items() if t == tag)
        if not found:
            raise KeyError(f"tag {tag} not present in mesh")
        return found

    def facet_measure(self, facets) -> float:
        total = 0.0
        for f in facets:
            pts = self.vertices[list(f)]
            if self.dim == 2:
                total += float(np.linalg.norm(pts[1] - pts[0]))
            else:
                total += 0.5 * float(np.linalg.norm(np.cross(pts[1] - pts[0], pts[2] - pts[0])))
        return total

    def _check_tags(self):
        boundary = self.topological_boundary()
        tagged = set(self.facet_tags)
        if tagged != boundary:
            missing = len(boundary - tagged)
            extra = len(tagged - boundary)
            raise ValueError(f"facet tags do not match boundary ({missing} untagged, {extra} interior)")
        kinds = {t.kind for t in self.facet_tags.values()}
        if not kinds & {FacetKind.INLET, FacetKind.INTERFACE}:
            raise ValueError("block needs an inlet or interface port")
        if not kinds & {FacetKind.OUTLET, FacetKind.INTERFACE}:
            raise ValueError("block needs an outlet or interface port")

    def to_text(self) -> str:
        """Plain-text export: header ``dim nv nc nf``, vertices, cells, tagged facets."""
        lines = [f"{self.dim} {self.n_vertices} {self.n_cells} {len(self.facet_tags)}"]
        lines += [" ".join(f"{c:.17g}" for c in v) for v in self.vertices]
        lines += [" ".join(str(i) for i in c) for c in self.cells]
        for f, t in sorted(self.facet_tags.items(), key=lambda item: item[0]):
            lines.append(" ".join(str(i) for i in f) + f" {t.kind.value} {t.index}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SimplicialMesh":
        rows = [r.split() for r in text.strip().splitlines()]
        dim, nv, nc, nf = (int(x) for x in rows[0])
        verts = np.array([[float(x) for x in r] for r in rows[1 : 1 + nv]])
        cells = np.array([[int(x) for x in r] for r in rows[1 + nv : 1 + nv + nc]])
        tags = {}
        for r in rows[1 + nv + nc : 1 + nv + nc + nf]:
            tags[tuple(int(x) for x in r[:dim])] = FacetTag(FacetKind(r[dim]), int(r[dim + 1]))
        return cls(verts, cells, tags)


def local_edges(dim: int) -> list[tuple[int, int]]:
    """Local vertex pairs of a simplex, in the fixed order used for P2 edge nodes."""
    return list(combinations(range(dim + 1), 2))


def _grid_quad(corners: np.ndarray, nx: int, ny: int):
    """Bilinear patch ``X(a, b)`` sampled on an (nx+1) x (ny+1) grid, split into triangles."""
    p00, p10, p11, p01 = corners
    a = np.linspace(0.0, 1.0, nx + 1)
    b = np.linspace(0.0, 1.0, ny + 1)
    A, Bm = np.meshgrid(a, b, indexing="ij")
    A, Bm = A[..., None], Bm[..., None]
    pts = (1 - A) * (1 - Bm) * p00 + A * (1 - Bm) * p10 + A * Bm * p11 + (1 - A) * Bm * p01
    pts = pts.reshape(-1, 2)
    idx = np.arange((nx + 1) * (ny + 1)).reshape(nx + 1, ny + 1)
    v00 = idx[:-1, :-1].ravel()
    v10 = idx[1:, :-1].ravel()
    v11 = idx[1:, 1:].ravel()
    v01 = idx[:-1, 1:].ravel()
    tris = np.concatenate([np.stack([v00, v10, v11], 1), np.stack([v00, v11, v01], 1)])
    return pts, tris


def _merge(patches) -> tuple[np.ndarray, np.ndarray]:
    """Concatenate patches and identify coincident vertices."""
    pts, cells, offset = [], [], 0
    for p, c in patches:
        pts.append(p)
        cells.append(c + offset)
        offset += len(p)
    pts = np.concatenate(pts)
    cells = np.concatenate(cells)
    keys = np.round(pts * 1e9).astype(np.int64)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    order = np.argsort(first)
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    return pts[first[order]], rank[inverse.ravel()][cells]


def _tag_by_ports(vertices, cells, ports: dict[FacetTag, ReferencePort]):
    mesh_boundary = SimplicialMesh.__new__(SimplicialMesh)
    mesh_boundary.vertices, mesh_boundary.cells = vertices, cells
    tags = {}
    for f in SimplicialMesh.topological_boundary(mesh_boundary):
        p = vertices[list(f)]
        tag = WALL
        for t, port in ports.items():
            d = port.end - port.start
            nrm = np.array([d[1], -d[0]]) / np.linalg.norm(d)
            s = (p - port.start) @ d / (d @ d)
            if np.all(np.abs((p - port.start) @ nrm) < 1e-9) and np.all((s > -1e-9) & (s < 1 + 1e-9)):
                tag = t
                break
        tags[f] = tag
    return tags


# Reference bifurcation geometry
BIF_STEM_LENGTH = 1.0
BIF_CROTCH = np.array([1.9, 0.0])
BIF_ARM_WIDTH = 0.7
BIF_ARM_LENGTH = 1.5
BIF_ARM_ANGLE = math.pi / 4


def bifurcation_outline() -> dict[str, np.ndarray]:
    """Key points of the reference Y (upper half; the lower half is mirrored)."""
    c = BIF_CROTCH
    d = np.array([math.cos(BIF_ARM_ANGLE), math.sin(BIF_ARM_ANGLE)])
    across = np.array([-d[1], d[0]])
    outer = c + BIF_ARM_WIDTH * across
    return {
        "mid": np.array([BIF_STEM_LENGTH, 0.0]),
        "shoulder": np.array([BIF_STEM_LENGTH, 0.5]),
        "crotch": c,
        "outer": outer,
        "inner_end": c + BIF_ARM_LENGTH * d,
        "outer_end": outer + BIF_ARM_LENGTH * d,
        "direction": d,
    }


def bifurcation_area() -> float:
    """Exact area of the reference Y polygon."""
    k = bifurcation_outline()
    upper = [np.array([0.0, 0.0]), np.array([0.0, 0.5]), k["shoulder"], k["outer"],
             k["outer_end"], k["inner_end"], k["crotch"]]
    x = np.array([p[0] for p in upper])
    y = np.array([p[1] for p in upper])
    return abs(0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))) * 2.0


def _mirror(p: np.ndarray) -> np.ndarray:
    return p * np.array([1.0, -1.0])


def generate_reference_block(kind: "BlockKind | str", refinement: int) -> SimplicialMesh:
    """Structured triangulation of a reference building block.

    Parameters
    ----------
    kind : BlockKind or str
        ``T1``, ``T2``, ``T3`` or ``B``.
    refinement : int
        Number of cells across half the unit diameter; doubling it quadruples
        the cell count.

    Returns
    -------
    SimplicialMesh
    """
    kind = BlockKind.parse(kind)
    if int(refinement) != refinement or refinement < 1:
        raise ValueError("refinement must be a positive integer")
    r = int(refinement)
    if kind.is_tube:
        L = kind.length
        ny = 2 * r
        nx = int(L) * ny
        corners = np.array([[0, -0.5], [L, -0.5], [L, 0.5], [0, 0.5]], dtype=float)
        verts, cells = _grid_quad(corners, nx, ny)
        ports = {
            inlet(0): ReferencePort(inlet(0), np.array([0.0, 0.5]), np.array([0.0, -0.5])),
            outlet(0): ReferencePort(outlet(0), np.array([L, -0.5]), np.array([L, 0.5])),
        }
    else:
        k = bifurcation_outline()
        n_stem = 2 * r
        n_junction = max(1, round(1.8 * r))
        n_arm = max(1, round(BIF_ARM_LENGTH * 2 * r))
        patches = [
            _grid_quad(np.array([[0, -0.5], [1, -0.5], [1, 0.5], [0, 0.5]], dtype=float), n_stem, n_stem),
        ]
        for mirror in (False, True):
            m = _mirror if mirror else (lambda p: p)
            patches.append(_grid_quad(np.array([m(k["mid"]), m(k["crotch"]), m(k["outer"]), m(k["shoulder"])]),
                                      n_junction, r))
            patches.append(_grid_quad(np.array([m(k["crotch"]), m(k["inner_end"]), m(k["outer_end"]), m(k["outer"])]),
                                      n_arm, r))
        verts, cells = _merge(patches)
        ports = {
            inlet(0): ReferencePort(inlet(0), np.array([0.0, 0.5]), np.array([0.0, -0.5])),
            outlet(0): ReferencePort(outlet(0), k["inner_end"], k["outer_end"]),
            outlet(1): ReferencePort(outlet(1), _mirror(k["outer_end"]), _mirror(k["inner_end"])),
        }
    # orient once so the tagging helper sees valid cells
    vol = _signed_volumes(verts, cells)
    cells = cells.copy()
    neg = vol < 0
    cells[neg, 0], cells[neg, 1] = cells[neg, 1].copy(), cells[neg, 0].copy()
    tags = _tag_by_ports(verts, cells, ports)
    return SimplicialMesh(verts, cells, tags, ports=ports, kind=kind)
