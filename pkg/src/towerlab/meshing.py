"""Graded triangulations of marked polygons.

Boundary nodes come from an equal-partition of the 1D sizing integral along
each unit edge, interior nodes from a stack of hexagonal lattices whose
spacings halve until they resolve the local target length

    l(x) = h * max(g, min(1, d(x) / 0.3))

with d the distance to the nearest polygon vertex.  A fixed number of
Laplacian smoothing sweeps (re-triangulating each time) relaxes the lattice
seams.  Everything is deterministic in (polygon, h, g): no randomness, node
order is boundary-first in arc order, then interior sorted by (y, x).

Meshes refuse to exist below 20 degrees of minimum angle; refinement splits
1 -> 4 by edge midpoints and keeps parent nodes as a prefix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay, cKDTree

from .formats import write_obj
from .polygon import MarkedPolygon, boundary_distance, contains

VERTEX_RADIUS = 0.3
MIN_ANGLE_DEG = 20.0
SMOOTH_SWEEPS = 24
BOUNDARY_MARGIN = 0.5


class MeshFailure(RuntimeError):
    pass


class OutsideDomain(ValueError):
    pass


def _lock(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TriMesh:
    """Immutable triangulation of a marked polygon.

    ``bnd_edges[k]`` is a consecutive pair of boundary node indices lying on
    polygon edge ``bnd_edge_id[k]`` which carries marking ``bnd_marking[k]``.
    ``bnd_edges[i]`` is the i-th boundary segment (start, end) in arc order
    from polygon vertex 0, so ``bnd_edges[:, 0]`` lists the boundary nodes
    in arc order; ``vertex_nodes[i]`` is the node at polygon vertex i.
    ``triangulate`` numbers boundary nodes 0..n_boundary-1, but ``refine``
    appends its boundary midpoints, so index position is not a reliable
    boundary test; use ``boundary_nodes`` or ``interior_mask``.
    """

    polygon: MarkedPolygon
    h: float
    g: float
    nodes: np.ndarray
    triangles: np.ndarray
    bnd_edges: np.ndarray
    bnd_edge_id: np.ndarray
    bnd_marking: np.ndarray
    vertex_nodes: np.ndarray

    @property
    def n_boundary(self):
        return len(self.bnd_edges)

    def boundary_nodes(self):
        return self.bnd_edges[:, 0]

    def interior_mask(self):
        mask = np.ones(len(self.nodes), dtype=bool)
        mask[self.bnd_edges[:, 0]] = False
        return mask

    def triangle_areas(self):
        a, b, c = (self.nodes[self.triangles[:, k]] for k in range(3))
        return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
                      - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))

    def min_angle(self):
        return float(np.min(_angles(self.nodes, self.triangles)))


def sizing(p, pts, h, g):
    """Local target edge length at each point."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    d = np.min(np.linalg.norm(pts[:, None, :] - p.vertices[None, :, :], axis=2), axis=1)
    return h * np.maximum(g, np.minimum(1.0, d / VERTEX_RADIUS))


def _angles(nodes, tris):
    """All triangle corner angles in degrees, shape (T, 3)."""
    P = nodes[tris]
    out = np.empty((len(tris), 3))
    for k in range(3):
        u = P[:, (k + 1) % 3] - P[:, k]
        v = P[:, (k + 2) % 3] - P[:, k]
        num = u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]
        den = (u * v).sum(axis=1)
        out[:, k] = np.degrees(np.abs(np.arctan2(num, den)))
    return out


def _boundary_nodes(p, h, g):
    """Per-edge graded subdivision; returns node list and per-edge counts."""
    nodes = []
    counts = []
    t = np.linspace(0.0, 1.0, 513)
    for i in range(p.edge_count):
        a, b = p.edge(i)
        pts = a[None, :] + t[:, None] * (b - a)[None, :]
        ell = sizing(p, pts, h, g)
        dens = 1.0 / ell
        F = np.concatenate([[0.0], np.cumsum((dens[1:] + dens[:-1]) * 0.5 * (t[1] - t[0]))])
        n_seg = max(1, int(math.ceil(F[-1] - 1e-9)))
        targets = F[-1] * np.arange(1, n_seg) / n_seg
        ts = np.interp(targets, F, t)
        nodes.append(a)
        for tk in ts:
            nodes.append(a + tk * (b - a))
        counts.append(n_seg)
    return np.asarray(nodes), np.asarray(counts, dtype=int)


def _symmetry_frame(p):
    """Lattice frame adapted to a marking-swap isometry of the polygon.

    The capped solves carry a nearly free additive mode (walls detach the
    interior level from the Dirichlet data), so the discrete minimizer's
    level is pinned only when the mesh shares a symmetry that negates the
    boundary data.  A mirror axis through a vertex and the centroid always
    swaps alternating markings; lattice rows along it (or any lattice
    centered at the centroid, for central symmetry) inherit the pinning.
    Returns (origin, row direction).
    """
    verts = p.vertices
    m = len(verts)
    ctr = verts.mean(axis=0)
    for k in range(m):
        d = verts[k] - ctr
        norm = math.hypot(*d)
        if norm < 1e-12:
            continue
        d = d / norm
        # reflection about the line through ctr with direction d
        rel = verts - ctr
        along = rel @ d
        perp = rel @ np.array([-d[1], d[0]])
        mirrored = ctr + along[:, None] * d + (-perp)[:, None] * np.array([-d[1], d[0]])
        want = verts[(2 * k - np.arange(m)) % m]
        if np.abs(mirrored - want).max() < 1e-9:
            return ctr, d
    return ctr, np.array([1.0, 0.0])


def _lattice_group(p, origin, d):
    """Isometries of the polygon that also preserve a hex lattice in frame d.

    Hex-lattice point groups allow rotations by multiples of 60 degrees
    about a lattice point and reflections about axes at 30-degree steps
    from the row direction, so only those candidates are tested against
    the vertex set.  Always contains the identity.
    """
    verts = p.vertices
    vtree = cKDTree(verts)
    base = math.atan2(d[1], d[0])
    mats = []
    for k in range(6):
        t = k * math.pi / 3.0
        c, s = math.cos(t), math.sin(t)
        mats.append(np.array([[c, -s], [s, c]]))
    for k in range(6):
        t = 2.0 * (base + k * math.pi / 6.0)
        c, s = math.cos(t), math.sin(t)
        mats.append(np.array([[c, s], [s, -c]]))
    keep = []
    for R in mats:
        img = origin + (verts - origin) @ R.T
        dd, _ = vtree.query(img)
        if dd.max() < 1e-9:
            keep.append(R)
    return keep


class _SnapSet:
    """Proximity membership on a coarse grid; catches float twins."""

    def __init__(self, tol=1e-7):
        self.tol = tol
        self.cells = {}

    def _key(self, q):
        return (int(round(q[0] * 1e6)), int(round(q[1] * 1e6)))

    def near(self, q):
        kx, ky = self._key(q)
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for r in self.cells.get((kx + dx, ky + dy), ()):
                    if abs(r[0] - q[0]) < self.tol and abs(r[1] - q[1]) < self.tol:
                        return True
        return False

    def add(self, q):
        self.cells.setdefault(self._key(q), []).append((q[0], q[1]))


def _interior_nodes(p, h, g, bnd):
    """Stacked hex lattices filtered by sizing band and boundary margin.

    Lattices live in the symmetry frame, and accept/reject decisions are
    made once per symmetry orbit: the first orbit member reached runs the
    filters and the whole orbit enters or stays out together.  Without
    this the graded multi-level stacks lose the polygon's symmetry to
    1e-16 threshold noise, which un-pins the additive mode of the capped
    solves (see jssolver).
    """
    levels = max(0, int(math.ceil(math.log2(1.0 / g) - 1e-12)))
    origin, d = _symmetry_frame(p)
    nvec = np.array([-d[1], d[0]])
    group = _lattice_group(p, origin, d)
    radius = float(np.max(np.linalg.norm(p.vertices - origin, axis=1)))
    accepted = []
    seen = _SnapSet()
    tree = cKDTree(bnd)
    for lev in range(levels + 1):
        s = h * 0.5 ** lev
        dy = s * math.sqrt(3.0) / 2.0
        n_rows = int(radius / dy) + 2
        n_cols = int(radius / s) + 2
        cand = []
        for j in range(-n_rows, n_rows + 1):
            off = 0.5 * s if j % 2 else 0.0
            for i in range(-n_cols - 1, n_cols + 1):
                cand.append(origin + (i * s + off) * d + (j * dy) * nvec)
        cand = np.asarray(cand)
        ell = sizing(p, cand, h, g)
        band = (s <= 1.42 * ell) & (s > 0.71 * ell)
        cand = cand[band]
        ell = ell[band]
        new = []
        for q, lq in zip(cand, ell):
            if seen.near(q):
                continue
            if not contains(p, q, tol=-1e-12):
                continue
            if boundary_distance(p, q) < BOUNDARY_MARGIN * lq:
                continue
            if tree.query(q)[0] < 0.55 * lq:
                continue
            for R in group:
                im = origin + R @ (q - origin)
                if seen.near(im):
                    continue
                seen.add(im)
                new.append(im)
        if new:
            accepted.extend(new)
            tree = cKDTree(np.vstack([bnd, np.asarray(accepted)]))
    if not accepted:
        return np.empty((0, 2))
    pts = np.asarray(accepted)
    order = np.lexsort((pts[:, 0], pts[:, 1]))
    return pts[order]


def _delaunay_triangles(nodes):
    tri = Delaunay(nodes)
    simplices = np.array(tri.simplices, dtype=np.int64)
    a, b, c = (nodes[simplices[:, k]] for k in range(3))
    area2 = ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
             - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))
    flip = area2 < 0
    simplices[flip] = simplices[flip][:, ::-1]
    # drop exactly degenerate slivers from collinear boundary runs
    keep = np.abs(area2) > 1e-14
    simplices = simplices[keep]
    roll = np.argmin(simplices, axis=1)
    rolled = np.stack([simplices[np.arange(len(simplices)), (roll + k) % 3]
                       for k in range(3)], axis=1)
    order = np.lexsort((rolled[:, 2], rolled[:, 1], rolled[:, 0]))
    return rolled[order]


def _node_orbits(p, nodes):
    """Pair every node with its image under each isometry of the layout.

    The pairing is computed once from the raw node set, which the lattice
    generator makes exactly symmetric.  Smoothing moves nodes but never
    reorders them, so the index maps stay valid for the whole pipeline.
    """
    origin, d = _symmetry_frame(p)
    group = _lattice_group(p, origin, d)
    if len(group) <= 1:
        return origin, []
    tree = cKDTree(nodes)
    maps = []
    for R in group:
        img = origin + (nodes - origin) @ R.T
        dd, idx = tree.query(img)
        if dd.max() > 1e-6 or len(np.unique(idx)) != len(nodes):
            continue
        maps.append((R, idx))
    return origin, maps


def _symmetrize(pts, n_bnd, origin, maps):
    # average each node over its isometry orbit; Delaunay tie-breaks in
    # near-cocircular spots otherwise let mirror twins drift apart over
    # the sweeps, and the solver is sensitive to that at the walls
    if not maps:
        return pts
    acc = np.zeros_like(pts)
    for R, idx in maps:
        acc += (pts[idx] - origin) @ R
    out = origin + acc / len(maps)
    out[:n_bnd] = pts[:n_bnd]
    return out


def _laplacian_sweeps(pts, n_bnd, sweeps, origin, maps):
    for _ in range(sweeps):
        tris = _delaunay_triangles(pts)
        neigh_sum = np.zeros_like(pts)
        neigh_cnt = np.zeros(len(pts))
        for k in range(3):
            i = tris[:, k]
            for m in (1, 2):
                j = tris[:, (k + m) % 3]
                np.add.at(neigh_sum, i, pts[j])
                np.add.at(neigh_cnt, i, 1.0)
        target = neigh_sum / np.maximum(neigh_cnt, 1.0)[:, None]
        move = target - pts
        move[:n_bnd] = 0.0
        pts = _symmetrize(pts + 0.7 * move, n_bnd, origin, maps)
    return pts


def _odt_sweeps(p, pts, n_bnd, sweeps, origin, maps):
    # move interior nodes to the area-weighted average of incident
    # circumcenters; equalizes shapes where plain averaging stalls
    for _ in range(sweeps):
        tris = _delaunay_triangles(pts)
        a, b, c = pts[tris[:, 0]], pts[tris[:, 1]], pts[tris[:, 2]]
        d = 2.0 * ((a[:, 0] - c[:, 0]) * (b[:, 1] - c[:, 1])
                   - (a[:, 1] - c[:, 1]) * (b[:, 0] - c[:, 0]))
        a2 = (a * a).sum(1) - (c * c).sum(1)
        b2 = (b * b).sum(1) - (c * c).sum(1)
        cc = np.stack([((b[:, 1] - c[:, 1]) * a2 - (a[:, 1] - c[:, 1]) * b2) / d,
                       (-(b[:, 0] - c[:, 0]) * a2 + (a[:, 0] - c[:, 0]) * b2) / d],
                      axis=1)
        area = np.abs(d) / 4.0
        acc = np.zeros_like(pts)
        w = np.zeros(len(pts))
        for k in range(3):
            np.add.at(acc, tris[:, k], area[:, None] * cc)
            np.add.at(w, tris[:, k], area)
        target = acc / np.maximum(w, 1e-30)[:, None]
        moved = pts.copy()
        moved[n_bnd:] = target[n_bnd:]
        for i in range(n_bnd, len(pts)):
            if not contains(p, moved[i], tol=-1e-12):
                moved[i] = pts[i]
        pts = _symmetrize(moved, n_bnd, origin, maps)
    return pts


def _smooth(p, nodes, n_bnd, h, g, sweeps):
    origin, maps = _node_orbits(p, nodes)
    n_lap = max(1, sweeps // 2 - 2)
    pts = _laplacian_sweeps(nodes.copy(), n_bnd, n_lap, origin, maps)
    return _odt_sweeps(p, pts, n_bnd, sweeps - n_lap, origin, maps)


def triangulate(p, h, g=1.0):
    """Build a graded quality triangulation.

    Deterministic in (p, h, g).  Raises MeshFailure when the 20 degree
    angle bound cannot be met.
    """
    if not 0 < g <= 1:
        raise MeshFailure(f"grading factor {g} outside (0, 1]")
    if h <= 0 or h > 1:
        raise MeshFailure(f"target length {h} outside (0, 1]")
    bnd, counts = _boundary_nodes(p, h, g)
    interior = _interior_nodes(p, h, g, bnd)
    nodes = np.vstack([bnd, interior]) if len(interior) else bnd.copy()
    n_bnd = len(bnd)
    nodes = _smooth(p, nodes, n_bnd, h, g, SMOOTH_SWEEPS)
    tris = _delaunay_triangles(nodes)

    mesh = _assemble(p, h, g, nodes, tris, counts)
    worst = mesh.min_angle()
    if worst < MIN_ANGLE_DEG:
        # a few extra relaxation rounds, then give up honestly
        nodes = _smooth(p, nodes, n_bnd, h, g, SMOOTH_SWEEPS)
        tris = _delaunay_triangles(nodes)
        mesh = _assemble(p, h, g, nodes, tris, counts)
        worst = mesh.min_angle()
        if worst < MIN_ANGLE_DEG:
            raise MeshFailure(f"min angle {worst:.2f} deg below {MIN_ANGLE_DEG}")
    return mesh


def _assemble(p, h, g, nodes, tris, counts):
    n_bnd = int(counts.sum())
    m = len(counts)
    pairs = np.stack([np.arange(n_bnd), (np.arange(n_bnd) + 1) % n_bnd], axis=1)
    edge_id = np.repeat(np.arange(m), counts)
    marking = p.markings[edge_id]
    vertex_nodes = np.concatenate([[0], np.cumsum(counts)[:-1]])

    # validation: every node used, boundary segments conforming, area match
    used = np.zeros(len(nodes), dtype=bool)
    used[tris.ravel()] = True
    if not used.all():
        raise MeshFailure("triangulation dropped nodes")
    edge_set = set()
    for k in range(3):
        e = np.stack([tris[:, k], tris[:, (k + 1) % 3]], axis=1)
        edge_set.update(map(tuple, np.sort(e, axis=1).tolist()))
    for a, b in pairs:
        if (min(a, b), max(a, b)) not in edge_set:
            raise MeshFailure(f"boundary segment {a}-{b} not conforming")
    mesh = TriMesh(polygon=p, h=float(h), g=float(g),
                   nodes=_lock(nodes), triangles=_lock(tris),
                   bnd_edges=_lock(pairs), bnd_edge_id=_lock(edge_id),
                   bnd_marking=_lock(marking), vertex_nodes=_lock(vertex_nodes))
    areas = mesh.triangle_areas()
    if np.any(areas <= 0):
        raise MeshFailure("nonpositive triangle area")
    poly_area = 0.5 * float(np.sum(
        p.vertices[:, 0] * np.roll(p.vertices[:, 1], -1)
        - p.vertices[:, 1] * np.roll(p.vertices[:, 0], -1)))
    if abs(float(areas.sum()) - poly_area) > 1e-9:
        raise MeshFailure("triangle areas do not cover the polygon")
    bdist = np.array([boundary_distance(p, q) for q in nodes[:n_bnd]])
    if bdist.max() > 1e-9:
        raise MeshFailure("boundary node off the polygon boundary")
    return mesh


def refine(mesh):
    """Split every triangle 1 -> 4 by edge midpoints.

    Parent nodes keep their indices (prefix property); midpoint nodes are
    appended in sorted parent-edge order.  Angles are unchanged, h halves.
    """
    nodes = np.asarray(mesh.nodes)
    tris = np.asarray(mesh.triangles)
    edges = {}
    for t in tris:
        for k in range(3):
            a, b = int(t[k]), int(t[(k + 1) % 3])
            edges.setdefault((min(a, b), max(a, b)), None)
    edge_list = sorted(edges)
    base = len(nodes)
    for idx, e in enumerate(edge_list):
        edges[e] = base + idx
    midpoints = np.array([(nodes[a] + nodes[b]) * 0.5 for a, b in edge_list])
    new_nodes = np.vstack([nodes, midpoints])
    out = []
    for t in tris:
        a, b, c = (int(v) for v in t)
        mab = edges[(min(a, b), max(a, b))]
        mbc = edges[(min(b, c), max(b, c))]
        mca = edges[(min(c, a), max(c, a))]
        out.extend([(a, mab, mca), (b, mbc, mab), (c, mca, mbc), (mab, mbc, mca)])
    new_tris = np.asarray(out, dtype=np.int64)
    roll = np.argmin(new_tris, axis=1)
    new_tris = np.stack([new_tris[np.arange(len(new_tris)), (roll + k) % 3]
                         for k in range(3)], axis=1)
    order = np.lexsort((new_tris[:, 2], new_tris[:, 1], new_tris[:, 0]))
    new_tris = new_tris[order]

    pairs = []
    edge_id = []
    marking = []
    for (a, b), eid, mk in zip(mesh.bnd_edges, mesh.bnd_edge_id, mesh.bnd_marking):
        mid = edges[(min(int(a), int(b)), max(int(a), int(b)))]
        pairs.extend([(int(a), mid), (mid, int(b))])
        edge_id.extend([int(eid)] * 2)
        marking.extend([int(mk)] * 2)
    return TriMesh(polygon=mesh.polygon, h=mesh.h / 2.0, g=mesh.g,
                   nodes=_lock(new_nodes), triangles=_lock(new_tris),
                   bnd_edges=_lock(np.asarray(pairs, dtype=np.int64)),
                   bnd_edge_id=_lock(np.asarray(edge_id, dtype=np.int64)),
                   bnd_marking=_lock(np.asarray(marking, dtype=np.int64)),
                   vertex_nodes=mesh.vertex_nodes)


def locate(mesh, q):
    """Containing triangle and barycentric coordinates of a point.

    Ties on shared edges go to the lowest triangle index.  Raises
    OutsideDomain for points beyond all triangles.
    """
    idx, bary = locate_many(mesh, np.asarray(q, dtype=float)[None, :])
    return int(idx[0]), bary[0]


def locate_many(mesh, pts, tol=1e-10):
    pts = np.asarray(pts, dtype=float)
    tris = mesh.triangles
    a = mesh.nodes[tris[:, 0]]
    b = mesh.nodes[tris[:, 1]]
    c = mesh.nodes[tris[:, 2]]
    det = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    out_idx = np.empty(len(pts), dtype=np.int64)
    out_bary = np.empty((len(pts), 3))
    for s in range(0, len(pts), 256):
        block = pts[s:s + 256]
        dx = block[:, None, 0] - a[None, :, 0]
        dy = block[:, None, 1] - a[None, :, 1]
        l1 = ((c[:, 1] - a[:, 1])[None, :] * dx - (c[:, 0] - a[:, 0])[None, :] * dy) / det[None, :]
        l2 = (-(b[:, 1] - a[:, 1])[None, :] * dx + (b[:, 0] - a[:, 0])[None, :] * dy) / det[None, :]
        l0 = 1.0 - l1 - l2
        ok = (l0 >= -tol) & (l1 >= -tol) & (l2 >= -tol)
        for r in range(len(block)):
            hits = np.flatnonzero(ok[r])
            if len(hits) == 0:
                raise OutsideDomain(f"point {tuple(block[r])} outside the mesh")
            t = int(hits[0])
            out_idx[s + r] = t
            out_bary[s + r] = (l0[r, t], l1[r, t], l2[r, t])
    return out_idx, out_bary


def mesh_to_obj(mesh, path, comment=None):
    """Write the flat mesh as OBJ with x3 = 0."""
    verts = np.column_stack([mesh.nodes, np.zeros(len(mesh.nodes))])
    write_obj(path, verts, mesh.triangles, comment=comment)
