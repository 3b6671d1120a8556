"""Triangulated branched double covers of the Riemann sphere, and flat tori.

Construction of a hyperelliptic surface y^2 = prod(x - e_i):

1. A coarse Delaunay triangulation of the round sphere (stereographic image
   of the x-line) whose vertices include every branch point, a ring of six
   points around each branch point, and background points from a sizing
   function that shrinks near clustered branch points.
2. Each branch-point pair of the cut plan is joined by a path of coarse edges.
3. Nested refinement: every coarse triangle is split into ``N**2`` triangles,
   ``N = base_resolution * 2**level``. Inside the star of a branch point the
   lattice is pulled toward the branch point by the radial warp
   ``w(s) = s**b * (b - (b - 1) s)``, ``b = 1 + branch_grading_depth``.
4. Two copies of the refined sphere are glued crosswise along the cut paths.
   Vertex copies are the connected classes of triangle corners under that
   gluing, so branch points come out as single cone vertices of angle 4 pi.
5. The value of ``y`` is continued triangle by triangle across non-cut edges
   of one sheet; the other sheet carries ``-y``.

Triangles are flat chords of the unit sphere. Stiffness uses their cotangent
weights; integrals use the radial projection onto the sphere, so the
projected triangles tile the sphere exactly and only quadrature error is
left. Each triangle evaluates forms in one chart: ``x`` when its centroid has
``|x| <= 1``, else ``u = 1/x``.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.spatial import ConvexHull

from .errors import ConstructionError, ModelError, ValidationError
from .quadrature import collapsed_rule
from .surfaces import HyperellipticCurve, SurfaceModel, TorusSurface, model_hash

MESH_FORMAT_VERSION = 1

CHART_AFFINE = 0
CHART_INFINITY = 1
SHARED_SHEET = -1

DEFAULT_PARAMS = {
    "base_resolution": 2,
    "branch_grading_depth": 2,
    "refinement_level": 0,
    "coarse_spacing": 0.6,
    "quad_order": 4,
    "near_quad_order": 10,
    "singular_quad_order": 8,
    # None: 2 / N**2 rad, N = subdivisions per coarse edge (chord-triangle
    # angle deficit is O(h^2); measured ~0.7 / N**2)
    "angle_tol": None,
}


def mesh_params(params: dict | None = None, **overrides) -> dict:
    out = dict(DEFAULT_PARAMS)
    out.update(params or {})
    out.update(overrides)
    if int(out["base_resolution"]) < 1:
        raise ModelError("base_resolution must be >= 1")
    if int(out["refinement_level"]) < 0:
        raise ModelError("refinement_level must be >= 0")
    if int(out["branch_grading_depth"]) < 0:
        raise ModelError("branch_grading_depth must be >= 0")
    return out


# ---------------------------------------------------------------- sphere maps


def to_sphere(x) -> np.ndarray:
    """Inverse stereographic projection; ``np.inf`` maps to the north pole."""
    x = np.asarray(x, dtype=complex)
    r2 = np.abs(x) ** 2
    with np.errstate(invalid="ignore", over="ignore"):
        p = np.stack([2 * x.real, 2 * x.imag, r2 - 1.0], axis=-1) / (r2 + 1.0)[..., None]
    inf = ~np.isfinite(x)
    if np.any(inf):
        p[inf] = (0.0, 0.0, 1.0)
    return p


def sphere_to_x(p: np.ndarray) -> np.ndarray:
    return (p[..., 0] + 1j * p[..., 1]) / (1.0 - p[..., 2])


def sphere_to_u(p: np.ndarray) -> np.ndarray:
    return (p[..., 0] - 1j * p[..., 1]) / (1.0 + p[..., 2])


def sphere_to_chart(p: np.ndarray, chart: np.ndarray) -> np.ndarray:
    chart = np.broadcast_to(chart, p.shape[:-1])
    z = np.empty(p.shape[:-1], dtype=complex)
    aff = chart == CHART_AFFINE
    z[aff] = sphere_to_x(p[aff])
    z[~aff] = sphere_to_u(p[~aff])
    return z


def _normalize(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


# ---------------------------------------------------------------- data types


@dataclass
class BranchedMesh:
    """Closed triangulated surface with per-triangle charts and quadrature nodes.

    Triangle arrays are indexed by cover triangle; for hyperelliptic meshes
    the first half is sheet 0 and the second half sheet 1 of the same base
    triangles. ``node_*`` arrays hold quadrature nodes: owning triangle,
    barycentric coordinates in the flat triangle, weight in the chart area
    measure, chart coordinate and (hyperelliptic only) the value of ``y``
    in the chart (``y`` for the affine chart, ``u**(g+1) y`` at infinity).
    """

    kind: str
    genus: int
    triangles: np.ndarray
    tri_chart: np.ndarray
    tri_sheet: np.ndarray
    corner_z: np.ndarray
    edge_lengths: np.ndarray
    vertex_chart: np.ndarray
    vertex_z: np.ndarray
    vertex_sheet: np.ndarray
    vertex_cone: np.ndarray
    node_tri: np.ndarray
    node_bary: np.ndarray
    node_w: np.ndarray
    node_z: np.ndarray
    node_y: np.ndarray | None
    chart_branch: tuple[np.ndarray, np.ndarray] | None = None
    cut_edges: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=int))
    involution: np.ndarray | None = None
    corner_p: np.ndarray | None = None
    tri_zc: np.ndarray | None = None
    tri_yc: np.ndarray | None = None
    tri_rule: np.ndarray | None = None
    tri_rule_corner: np.ndarray | None = None
    model: SurfaceModel | None = None
    params: dict = field(default_factory=dict)
    report: dict = field(default_factory=dict)
    content_hash: str = ""

    @property
    def n_vertices(self) -> int:
        return int(self.vertex_z.shape[0])

    @property
    def n_triangles(self) -> int:
        return int(self.triangles.shape[0])

    @property
    def cone_vertices(self) -> np.ndarray:
        return np.flatnonzero(self.vertex_cone)

    def edges(self) -> np.ndarray:
        e = np.sort(self.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        return np.unique(e, axis=0)

    def euler_characteristic(self) -> int:
        return self.n_vertices - len(self.edges()) + self.n_triangles

    def interpolation_matrix(self) -> sparse.csr_matrix:
        """Sparse (n_nodes x n_vertices) matrix of hat-function values at nodes."""
        rows = np.repeat(np.arange(self.node_tri.size), 3)
        cols = self.triangles[self.node_tri].ravel()
        return sparse.csr_matrix(
            (self.node_bary.ravel(), (rows, cols)), shape=(self.node_tri.size, self.n_vertices)
        )

    def max_chart_edge(self) -> float:
        z = self.corner_z
        return float(np.max(np.abs(z[:, [1, 2, 0]] - z)))


# ---------------------------------------------------------------- coarse mesh


def _chord(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    return np.linalg.norm(p - q, axis=-1)


def _tangent_basis(p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.array([1.0, 0.0, 0.0]) if abs(p[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    t1 = _normalize(np.cross(p, a))
    return t1, np.cross(p, t1)


def _ring(p: np.ndarray, radius: float, count: int, toward: np.ndarray) -> np.ndarray:
    """``count`` sphere points at chord distance ``radius`` around ``p``."""
    t1, t2 = _tangent_basis(p)
    d = toward - np.dot(toward, p) * p
    theta0 = np.arctan2(np.dot(d, t2), np.dot(d, t1))
    alpha = 2.0 * np.arcsin(min(radius / 2.0, 1.0))
    th = theta0 + 2 * np.pi * np.arange(count) / count
    dirs = np.cos(th)[:, None] * t1 + np.sin(th)[:, None] * t2
    return np.cos(alpha) * p + np.sin(alpha) * dirs


def _fibonacci_sphere(n: int) -> np.ndarray:
    k = np.arange(n) + 0.5
    z = 1.0 - 2.0 * k / n
    r = np.sqrt(1.0 - z * z)
    phi = np.pi * (3.0 - np.sqrt(5.0)) * k
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def _segments_cross(a, b, c, d) -> bool:
    def orient(p, q, r):
        return np.sign(((q - p).conjugate() * (r - p)).imag)

    o1, o2 = orient(a, b, c), orient(a, b, d)
    o3, o4 = orient(c, d, a), orient(c, d, b)
    return o1 * o2 < 0 and o3 * o4 < 0


def check_cut_plan(curve: HyperellipticCurve) -> None:
    """Raise ConstructionError when straight cut segments intersect."""
    e = curve.branch_points
    plan = curve.cut_plan
    for i in range(len(plan)):
        for j in range(i + 1, len(plan)):
            a, b = plan[i]
            c, d = plan[j]
            if _segments_cross(e[a], e[b], e[c], e[d]):
                raise ConstructionError(
                    f"cut {plan[i]} crosses cut {plan[j]}", stage="cut_plan"
                )


def coarse_mesh(curve: HyperellipticCurve, spacing: float = 0.6):
    """Coarse sphere triangulation: (points, triangles, branch ids, ring ids)."""
    e = to_sphere(np.array(curve.branch_points))
    nb = len(e)
    dist = _chord(e[:, None, :], e[None, :, :]) + np.eye(nb) * 10.0
    nearest = dist.min(axis=1)
    rho = np.minimum(0.3 * nearest, 0.5 * spacing)
    partner = {}
    for a, b in curve.cut_plan:
        partner[a], partner[b] = b, a

    def sizing(p):
        d = _chord(p[:, None, :], e[None, :, :])
        s = rho[None, :] + 0.5 * np.maximum(d - rho[None, :], 0.0)
        return np.minimum(spacing, s.min(axis=1))

    fixed = [e]
    for i in range(nb):
        fixed.append(_ring(e[i], rho[i], 6, e[partner[i]]))
    accepted = np.concatenate(fixed)

    cands = []
    for i in range(nb):
        r = rho[i] * 1.6
        while r < min(2.0, 3.0 * spacing):
            s_here = min(spacing, rho[i] + 0.5 * (r - rho[i]))
            count = max(6, int(np.ceil(2 * np.pi * r / s_here)))
            cands.append(_ring(e[i], r, count, e[partner[i]]))
            r *= 1.6
    n_fib = int(np.ceil(4 * np.pi / (0.5 * spacing) ** 2))
    cands.append(_fibonacci_sphere(n_fib))
    cands = np.concatenate(cands)
    cands = cands[np.argsort(sizing(cands), kind="stable")]
    size_c = sizing(cands)
    pts = list(accepted)
    arr = accepted
    for c, s in zip(cands, size_c):
        if _chord(arr, c).min() >= 0.8 * s:
            pts.append(c)
            arr = np.vstack([arr, c])
    pts = np.array(pts)
    hull = ConvexHull(pts)
    tris = hull.simplices.copy()
    p0, p1, p2 = pts[tris[:, 0]], pts[tris[:, 1]], pts[tris[:, 2]]
    flip = np.einsum("ij,ij->i", np.cross(p1 - p0, p2 - p0), p0) > 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    branch_ids = np.arange(nb)
    # every coarse triangle must touch at most one branch point
    nbranch = np.isin(tris, branch_ids).sum(axis=1)
    if np.any(nbranch > 1):
        raise ConstructionError("coarse triangle with two branch corners", stage="coarse_mesh")
    return pts, tris, branch_ids


def _cut_paths(pts, tris, curve: HyperellipticCurve) -> list[list[int]]:
    edges = np.sort(tris[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    edges = np.unique(edges, axis=0)
    nb = len(curve.branch_points)
    used = np.zeros(len(pts), dtype=bool)
    order = sorted(
        range(len(curve.cut_plan)),
        key=lambda k: abs(
            curve.branch_points[curve.cut_plan[k][0]] - curve.branch_points[curve.cut_plan[k][1]]
        ),
    )
    paths: dict[int, list[int]] = {}
    for k in order:
        a, b = curve.cut_plan[k]
        blocked = used.copy()
        blocked[:nb] = True
        blocked[[a, b]] = False
        ok = ~(blocked[edges[:, 0]] | blocked[edges[:, 1]])
        ed = edges[ok]
        w = _chord(pts[ed[:, 0]], pts[ed[:, 1]])
        g = sparse.coo_matrix((w, (ed[:, 0], ed[:, 1])), shape=(len(pts), len(pts)))
        dist, pred = csgraph.dijkstra(g, directed=False, indices=a, return_predecessors=True)
        if not np.isfinite(dist[b]):
            raise ConstructionError(
                f"no edge path for cut {(a, b)} disjoint from other cuts", stage="cut_paths"
            )
        path = [b]
        while path[-1] != a:
            path.append(int(pred[path[-1]]))
        path.reverse()
        used[path] = True
        paths[k] = path
    return [paths[k] for k in range(len(curve.cut_plan))]


# ---------------------------------------------------------------- refinement


def grading_warp(s: np.ndarray, exponent: float) -> np.ndarray:
    """Monotone map of [0,1] with w ~ exponent*s**exponent at 0 and w(1)=1, w'(1)=1."""
    if exponent == 1:
        return s
    return s**exponent * (exponent - (exponent - 1.0) * s)


def refine_sphere(pts, tris, branch_ids, n_sub: int, exponent: float):
    """Nested refinement of the coarse mesh; returns (points, triangles, edge index map)."""
    nc = len(pts)
    edges = np.sort(tris[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    edges, inverse = np.unique(edges, axis=0, return_inverse=True)
    edge_id = {(int(a), int(b)): k for k, (a, b) in enumerate(edges)}
    n = n_sub
    n_edge_pts = n - 1
    n_int = (n - 1) * (n - 2) // 2
    off_e = nc
    off_t = nc + len(edges) * n_edge_pts
    total = off_t + len(tris) * n_int
    out = np.zeros((total, 3))
    out[:nc] = pts
    is_branch = np.zeros(nc, dtype=bool)
    is_branch[branch_ids] = True

    ii, jj = [], []
    for i in range(n + 1):
        for j in range(n + 1 - i):
            ii.append(i)
            jj.append(j)
    ii, jj = np.array(ii), np.array(jj)
    local = -np.ones((n + 1, n + 1), dtype=int)
    local[ii, jj] = np.arange(ii.size)
    lam = np.stack([(n - ii - jj) / n, ii / n, jj / n], axis=1)
    int_mask = (ii > 0) & (jj > 0) & (ii + jj < n)
    int_index = np.cumsum(int_mask) - 1

    up = [(i, j) for i in range(n) for j in range(n - i)]
    down = [(i, j) for i in range(n - 1) for j in range(n - 1 - i)]
    up_t = np.array([[local[i, j], local[i + 1, j], local[i, j + 1]] for i, j in up])
    down_t = (
        np.array([[local[i + 1, j], local[i + 1, j + 1], local[i, j + 1]] for i, j in down])
        if down
        else np.zeros((0, 3), dtype=int)
    )
    sub = np.vstack([up_t, down_t])

    fine_tris = []
    for t, (A, B, C) in enumerate(tris):
        corners = (A, B, C)
        lam_w = lam.copy()
        for c in range(3):
            if is_branch[corners[c]]:
                s = 1.0 - lam[:, c]
                sw = grading_warp(s, exponent)
                with np.errstate(invalid="ignore", divide="ignore"):
                    scale = np.where(s > 0, sw / np.where(s > 0, s, 1.0), 0.0)
                lam_w = lam * scale[:, None]
                lam_w[:, c] = 1.0 - sw
        P = pts[[A, B, C]]
        pos = _normalize(lam_w @ P)
        gid = np.empty(ii.size, dtype=int)
        gid[int_mask] = off_t + t * n_int + int_index[int_mask]
        for k in np.flatnonzero(~int_mask):
            i, j = ii[k], jj[k]
            if i == 0 and j == 0:
                gid[k] = A
            elif i == n:
                gid[k] = B
            elif j == n:
                gid[k] = C
            else:
                if j == 0:
                    a, b, step = A, B, i
                elif i == 0:
                    a, b, step = A, C, j
                else:
                    a, b, step = B, C, j
                lo, hi = (a, b) if a < b else (b, a)
                pos_along = step if a < b else n - step
                gid[k] = off_e + edge_id[(int(lo), int(hi))] * n_edge_pts + pos_along - 1
        out[gid] = pos
        fine_tris.append(gid[sub])
    fine = np.vstack(fine_tris)

    def edge_chain(a: int, b: int) -> list[int]:
        lo, hi = (a, b) if a < b else (b, a)
        base = off_e + edge_id[(lo, hi)] * n_edge_pts
        chain = [lo] + [base + k for k in range(n_edge_pts)] + [hi]
        return chain if a == lo else chain[::-1]

    return out, fine, edge_chain


# ---------------------------------------------------------------- branch tracking


class _ChartY:
    """Local analytic branch of y on each triangle, normalized at its centroid."""

    def __init__(self, branch_points, genus):
        e = np.asarray(branch_points, dtype=complex)
        self.e = e
        self.g = genus
        nz = e[np.abs(e) > 0]
        self.pts = (e, 1.0 / nz)
        # multiplicative constants: prod(1 - e u) = prod(-e) prod(u - 1/e)
        self.const = (1.0 + 0j, complex(np.prod(-nz)))

    def poly(self, z, chart):
        out = np.empty(z.shape, dtype=complex)
        aff = chart == CHART_AFFINE
        out[aff] = np.prod(z[aff][..., None] - self.e, axis=-1)
        out[~aff] = np.prod(1.0 - np.multiply.outer(z[~aff], self.e), axis=-1)
        return out

    def local(self, z, zc, chart):
        """Value of the centroid-normalized branch at points ``z`` (shape (T, k))."""
        y0 = np.sqrt(self.poly(zc, chart))
        out = np.ones(z.shape, dtype=complex) * y0[:, None]
        for c in (CHART_AFFINE, CHART_INFINITY):
            m = chart == c
            if not np.any(m):
                continue
            for ze in self.pts[c]:
                out[m] *= np.sqrt((z[m] - ze) / (zc[m][:, None] - ze))
        return out

    def to_affine(self, val, z, chart):
        """Convert chart values to affine y (u-chart values are u**(g+1) y)."""
        out = val.copy()
        inf = chart == CHART_INFINITY
        out[inf] = val[inf] * z[inf] ** (-(self.g + 1))
        return out


def _continue_signs(base_tris, base_chart, base_zc, pts, cut_set, ych: _ChartY):
    """Sign per base triangle making y continuous across non-cut edges."""
    nt = len(base_tris)
    e = base_tris[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
    key = np.sort(e, axis=1)
    owner = np.repeat(np.arange(nt), 3)
    order = np.lexsort((key[:, 1], key[:, 0]))
    ks = key[order]
    same = np.all(ks[1:] == ks[:-1], axis=1)
    if not (np.sum(same) * 2 == len(ks)):
        raise ValidationError("base mesh is not a closed manifold", invariant="manifold")
    first = order[:-1][same]
    second = order[1:][same]
    t1, t2 = owner[first], owner[second]
    ek = key[first]
    mid = _normalize(pts[ek[:, 0]] + pts[ek[:, 1]])
    v1 = ych.local(sphere_to_chart(mid, base_chart[t1])[:, None], base_zc[t1], base_chart[t1])[:, 0]
    v2 = ych.local(sphere_to_chart(mid, base_chart[t2])[:, None], base_zc[t2], base_chart[t2])[:, 0]
    # compare in whichever chart the midpoint is bounded
    xm = sphere_to_x(mid)
    use_inf = np.abs(xm) > 1.0
    zc1 = sphere_to_chart(mid, base_chart[t1])
    zc2 = sphere_to_chart(mid, base_chart[t2])
    a1 = ych.to_affine(v1[:, None], zc1[:, None], base_chart[t1])[:, 0]
    a2 = ych.to_affine(v2[:, None], zc2[:, None], base_chart[t2])[:, 0]
    um = sphere_to_u(mid)
    g1 = np.where(use_inf, a1 * um ** (ych.g + 1), a1)
    g2 = np.where(use_inf, a2 * um ** (ych.g + 1), a2)
    ratio = g1 / g2
    rel = np.sign(ratio.real)
    is_cut = np.array([(int(a), int(b)) in cut_set for a, b in ek], dtype=bool)
    w = np.where(is_cut, -1.0, 1.0) * rel
    adj = sparse.coo_matrix(
        (np.ones(len(t1)), (t1, t2)), shape=(nt, nt)
    ).tocsr()
    adj = adj + adj.T
    sign = np.zeros(nt)
    lookup = {}
    for k in range(len(t1)):
        lookup[(t1[k], t2[k])] = w[k]
        lookup[(t2[k], t1[k])] = w[k]
    # sheet 0 sign propagates across non-cut edges; cut edges connect to the other sheet
    # (handled by the -1 in w), so a single BFS over all edges is consistent.
    order_bfs, pred = csgraph.breadth_first_order(adj, 0, directed=False, return_predecessors=True)
    sign[0] = 1.0
    for t in order_bfs[1:]:
        sign[t] = sign[pred[t]] * lookup[(pred[t], t)]
    # residual continuity check on all edges
    cut_sign = np.where(is_cut, -1.0, 1.0)
    resid = np.abs(sign[t1] * g1 - cut_sign * sign[t2] * g2) / np.maximum(np.abs(g1), 1e-300)
    return sign, float(np.max(resid)) if resid.size else 0.0


# ---------------------------------------------------------------- quadrature nodes


def _sphere_nodes(P: np.ndarray, bary: np.ndarray, weights: np.ndarray, chart: np.ndarray):
    """Chart coordinates and chart-area weights of nodes on flat chord triangles."""
    q = np.einsum("kc,tcd->tkd", bary, P)
    nq = np.linalg.norm(q, axis=-1)
    p = q / nq[..., None]
    nrm = np.cross(P[:, 1] - P[:, 0], P[:, 2] - P[:, 0])
    area2 = np.linalg.norm(nrm, axis=-1)
    d = np.abs(np.einsum("td,td->t", nrm, P[:, 0])) / area2
    w_sphere = weights[None, :] * (0.5 * area2)[:, None] * d[:, None] / nq**3
    z = sphere_to_chart(p, chart[:, None])
    conf = 4.0 / (1.0 + np.abs(z) ** 2) ** 2
    return z, w_sphere / conf


def branch_values(mesh: BranchedMesh, tri: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Chart value of y at points ``z`` of triangles ``tri`` (continued from the centroid)."""
    out = mesh.tri_yc[tri].astype(complex)
    zc = mesh.tri_zc[tri]
    chart = mesh.tri_chart[tri]
    for c in (CHART_AFFINE, CHART_INFINITY):
        m = chart == c
        for ze in mesh.chart_branch[c]:
            out[m] *= np.sqrt((z[m] - ze) / (zc[m] - ze))
    return out


def quadrature_nodes(mesh: BranchedMesh, quad_order=None, near_quad_order=None, singular_quad_order=None):
    """Quadrature nodes ``(tri, bary, w, z, y)`` for a hyperelliptic mesh.

    Orders default to the mesh parameters; passing different orders gives an
    independent rule on the same triangles (used for cross-checks).
    """
    p = mesh.params
    orders = (
        int(quad_order or p["quad_order"]),
        int(near_quad_order or p["near_quad_order"]),
        int(singular_quad_order or p["singular_quad_order"]),
    )
    tri_l, bary_l, w_l, z_l = [], [], [], []
    for kind, order in enumerate(orders):
        for c in range(3):
            mask = mesh.tri_rule == kind
            if kind == 2:
                mask &= mesh.tri_rule_corner == c
            elif c > 0:
                continue
            idx = np.flatnonzero(mask)
            if not idx.size:
                continue
            bary, w = collapsed_rule(order, c)
            z, wz = _sphere_nodes(mesh.corner_p[idx], bary, w, mesh.tri_chart[idx])
            tri_l.append(np.repeat(idx, len(w)))
            bary_l.append(np.tile(bary, (idx.size, 1)))
            w_l.append(wz.ravel())
            z_l.append(z.ravel())
    tri = np.concatenate(tri_l)
    order = np.argsort(tri, kind="stable")
    tri = tri[order]
    z = np.concatenate(z_l)[order]
    return tri, np.concatenate(bary_l)[order], np.concatenate(w_l)[order], z, branch_values(mesh, tri, z)


# ---------------------------------------------------------------- builders


def corner_angles(lengths: np.ndarray) -> np.ndarray:
    """Interior angles from edge lengths (column k is the edge opposite corner k)."""
    a, b, c = lengths[:, 0], lengths[:, 1], lengths[:, 2]
    cos0 = (b * b + c * c - a * a) / (2 * b * c)
    cos1 = (c * c + a * a - b * b) / (2 * c * a)
    cos2 = (a * a + b * b - c * c) / (2 * a * b)
    return np.arccos(np.clip(np.stack([cos0, cos1, cos2], axis=1), -1.0, 1.0))


def _validate(mesh: BranchedMesh, expected_genus: int, angle_tol: float) -> dict:
    tri = mesh.triangles
    e = np.sort(tri[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    _, counts = np.unique(e, axis=0, return_counts=True)
    z = mesh.corner_z
    signed = ((z[:, 1] - z[:, 0]).conjugate() * (z[:, 2] - z[:, 0])).imag
    ang = np.bincount(tri.ravel(), weights=corner_angles(mesh.edge_lengths).ravel(), minlength=mesh.n_vertices)
    target = np.where(mesh.vertex_cone, 4 * np.pi, 2 * np.pi)
    report = {
        "n_vertices": mesh.n_vertices,
        "n_triangles": mesh.n_triangles,
        "euler_characteristic": mesh.euler_characteristic(),
        "expected_euler_characteristic": 2 - 2 * expected_genus,
        "edge_multiplicity": [int(counts.min()), int(counts.max())],
        "min_signed_area": float(signed.min()),
        "n_cone_vertices": int(mesh.vertex_cone.sum()),
        "max_cone_angle_error": float(np.max(np.abs(ang - target)[mesh.vertex_cone]))
        if mesh.vertex_cone.any()
        else 0.0,
        "max_ordinary_angle_error": float(np.max(np.abs(ang - target)[~mesh.vertex_cone])),
    }
    if counts.min() != 2 or counts.max() != 2:
        raise ValidationError("some edge does not border exactly two triangles", invariant="manifold", report=report)
    if report["euler_characteristic"] != report["expected_euler_characteristic"]:
        raise ValidationError(
            f"Euler characteristic {report['euler_characteristic']} != {2 - 2 * expected_genus}",
            invariant="euler_characteristic",
            report=report,
        )
    if signed.min() <= 0:
        raise ValidationError("triangle not positively oriented in its chart", invariant="orientation", report=report)
    worst = max(report["max_cone_angle_error"], report["max_ordinary_angle_error"])
    if worst > angle_tol:
        raise ValidationError(
            f"vertex angle sum off by {worst:.3g} rad (tol {angle_tol})",
            invariant="cone_angles",
            report=report,
        )
    return report


def build_hyperelliptic(curve: HyperellipticCurve, params: dict | None = None) -> BranchedMesh:
    params = mesh_params(params)
    check_cut_plan(curve)
    g = curve.genus
    pts_c, tris_c, branch_ids = coarse_mesh(curve, float(params["coarse_spacing"]))
    paths = _cut_paths(pts_c, tris_c, curve)
    n_sub = int(params["base_resolution"]) * 2 ** int(params["refinement_level"])
    exponent = 1.0 + float(params["branch_grading_depth"])
    pts, base, chain = refine_sphere(pts_c, tris_c, branch_ids, n_sub, exponent)
    cut_set = set()
    cut_list = []
    for path in paths:
        for a, b in zip(path[:-1], path[1:]):
            ch = chain(int(a), int(b))
            for p, q in zip(ch[:-1], ch[1:]):
                cut_set.add((min(p, q), max(p, q)))
                cut_list.append((min(p, q), max(p, q)))
    nt = len(base)
    P = pts[base]
    centroid = _normalize(P.mean(axis=1))
    chart = np.where(centroid[:, 2] < 0, CHART_AFFINE, CHART_INFINITY).astype(np.int8)
    corner_z = sphere_to_chart(P, chart[:, None])
    zc = sphere_to_chart(centroid, chart)
    ych = _ChartY(curve.branch_points, g)
    sign, cont_resid = _continue_signs(base, chart, zc, pts, cut_set, ych)

    # ---- double cover vertices: classes of (triangle, sheet, corner)
    e = base[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
    loc = np.array([[0, 1], [1, 2], [2, 0]] * nt)
    owner = np.repeat(np.arange(nt), 3)
    key = np.sort(e, axis=1)
    order = np.lexsort((key[:, 1], key[:, 0]))
    ks = key[order]
    same = np.all(ks[1:] == ks[:-1], axis=1)
    f, s_ = order[:-1][same], order[1:][same]
    rows, cols = [], []
    for sheet in (0, 1):
        for a_, b_ in ((f, s_),):
            ta, tb = owner[a_], owner[b_]
            va = e[a_]
            vb = e[b_]
            la, lb = loc[a_], loc[b_]
            is_cut = np.array([(int(min(p, q)), int(max(p, q))) in cut_set for p, q in va])
            other = np.where(is_cut, 1 - sheet, sheet)
            # match endpoints: va[0] equals vb[0] or vb[1]
            match0 = np.where(vb[:, 0] == va[:, 0], lb[:, 0], lb[:, 1])
            match1 = np.where(vb[:, 0] == va[:, 0], lb[:, 1], lb[:, 0])
            na0 = (sheet * nt + ta) * 3 + la[:, 0]
            na1 = (sheet * nt + ta) * 3 + la[:, 1]
            nb0 = (other * nt + tb) * 3 + match0
            nb1 = (other * nt + tb) * 3 + match1
            rows += [na0, na1]
            cols += [nb0, nb1]
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    n_nodes = 2 * nt * 3
    graph = sparse.coo_matrix((np.ones(rows.size), (rows, cols)), shape=(n_nodes, n_nodes))
    ncomp, labels = csgraph.connected_components(graph, directed=False)
    # relabel deterministically by first occurrence
    _, first_idx = np.unique(labels, return_index=True)
    rank = np.empty(ncomp, dtype=int)
    rank[np.argsort(first_idx)] = np.arange(ncomp)
    labels = rank[labels]
    cover = labels.reshape(2 * nt, 3)

    base_vertex = np.zeros(ncomp, dtype=int)
    base_vertex[cover.ravel()] = np.tile(base, (2, 1)).ravel()
    vertex_sheet = np.zeros(ncomp, dtype=np.int8)
    sheet_of_corner = np.repeat(np.repeat([0, 1], nt), 3)
    vertex_sheet[cover.ravel()[::-1]] = sheet_of_corner[::-1]
    is_branch_v = np.isin(base_vertex, branch_ids)
    vertex_sheet[is_branch_v] = SHARED_SHEET
    invol = np.zeros(ncomp, dtype=int)
    invol[cover[:nt].ravel()] = cover[nt:].ravel()
    invol[cover[nt:].ravel()] = cover[:nt].ravel()
    vp = pts[base_vertex]
    vchart = np.where(vp[:, 2] < 0, CHART_AFFINE, CHART_INFINITY).astype(np.int8)
    vz = sphere_to_chart(vp, vchart)

    # ---- quadrature rule per base triangle: 0 far, 1 near a branch point, 2 incident
    is_b = np.zeros(len(pts), dtype=bool)
    is_b[branch_ids] = True
    corner_b = is_b[base]
    rule = np.zeros(nt, dtype=np.int8)
    corner = np.argmax(corner_b, axis=1).astype(np.int8)
    rule[corner_b.any(axis=1)] = 2
    ebr = to_sphere(np.array(curve.branch_points))
    dmin = _chord(centroid[:, None, :], ebr[None]).min(axis=1)
    diam = np.max(np.linalg.norm(P[:, [1, 2, 0]] - P, axis=-1), axis=1)
    rule[(rule == 0) & (dmin < 4.0 * diam)] = 1
    yc = np.sqrt(ych.poly(zc, chart)) * sign

    chart2 = np.concatenate([chart, chart])
    lengths = np.linalg.norm(P[:, [1, 2, 0]] - P[:, [2, 0, 1]], axis=-1)
    mesh = BranchedMesh(
        kind="hyperelliptic",
        genus=g,
        triangles=cover,
        tri_chart=chart2,
        tri_sheet=np.repeat(np.array([0, 1], dtype=np.int8), nt),
        corner_z=np.concatenate([corner_z, corner_z]),
        edge_lengths=np.concatenate([lengths, lengths]),
        vertex_chart=vchart,
        vertex_z=vz,
        vertex_sheet=vertex_sheet,
        vertex_cone=is_branch_v,
        node_tri=np.zeros(0, dtype=int),
        node_bary=np.zeros((0, 3)),
        node_w=np.zeros(0),
        node_z=np.zeros(0, dtype=complex),
        node_y=None,
        chart_branch=ych.pts,
        corner_p=np.concatenate([P, P]),
        tri_zc=np.concatenate([zc, zc]),
        tri_yc=np.concatenate([yc, -yc]),
        tri_rule=np.concatenate([rule, rule]),
        tri_rule_corner=np.concatenate([corner, corner]),
        cut_edges=np.array(cut_list, dtype=int).reshape(-1, 2),
        involution=invol,
        model=curve,
        params=params,
    )
    (mesh.node_tri, mesh.node_bary, mesh.node_w, mesh.node_z, mesh.node_y) = quadrature_nodes(mesh)
    tol = params["angle_tol"]
    report = _validate(mesh, g, 2.0 / n_sub**2 if tol is None else float(tol))
    report["continuation_residual"] = cont_resid
    report["n_sub"] = n_sub
    report["coarse_triangles"] = int(len(tris_c))
    if cont_resid > 1e-6:
        raise ValidationError(
            f"sheet continuation mismatch {cont_resid:.2e}", invariant="sheet_continuation", report=report
        )
    mesh.report = report
    mesh.content_hash = model_hash(curve, params)
    return mesh


def build_torus(torus: TorusSurface, params: dict | None = None) -> BranchedMesh:
    params = mesh_params(params)
    n = torus.grid_resolution * 2 ** int(params["refinement_level"])
    tau = torus.modulus
    a, b = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    a, b = a.ravel(), b.ravel()

    def vid(i, j):
        return (i % n) * n + (j % n)

    z0 = (a + b * tau) / n
    corner_offsets = [
        ((0, 0), (1, 0), (1, 1)),
        ((0, 0), (1, 1), (0, 1)),
    ]
    tris, cz = [], []
    for offs in corner_offsets:
        tris.append(np.stack([vid(a + da, b + db) for da, db in offs], axis=1))
        cz.append(np.stack([z0 + (da + db * tau) / n for da, db in offs], axis=1))
    tris = np.vstack(tris)
    cz = np.vstack(cz)
    nt = len(tris)
    bary, w = collapsed_rule(int(params["quad_order"]), 0)
    area = 0.5 * ((cz[:, 1] - cz[:, 0]).conjugate() * (cz[:, 2] - cz[:, 0])).imag
    node_tri = np.repeat(np.arange(nt), len(w))
    node_bary = np.tile(bary, (nt, 1))
    node_w = (area[:, None] * w[None, :]).ravel()
    node_z = np.einsum("kc,tc->tk", bary, cz).ravel()
    lengths = np.abs(cz[:, [1, 2, 0]] - cz[:, [2, 0, 1]])
    mesh = BranchedMesh(
        kind="torus",
        genus=1,
        triangles=tris,
        tri_chart=np.zeros(nt, dtype=np.int8),
        tri_sheet=np.zeros(nt, dtype=np.int8),
        corner_z=cz,
        edge_lengths=lengths,
        vertex_chart=np.zeros(n * n, dtype=np.int8),
        vertex_z=(np.arange(n * n) // n + (np.arange(n * n) % n) * tau) / n,
        vertex_sheet=np.zeros(n * n, dtype=np.int8),
        vertex_cone=np.zeros(n * n, dtype=bool),
        node_tri=node_tri,
        node_bary=node_bary,
        node_w=node_w,
        node_z=node_z,
        node_y=None,
        model=torus,
        params=params,
    )
    tol = params["angle_tol"]
    mesh.report = _validate(mesh, 1, 1e-9 if tol is None else float(tol))
    mesh.report["grid"] = n
    mesh.content_hash = model_hash(torus, params)
    return mesh


def build_surface(model: SurfaceModel, params: dict | None = None) -> BranchedMesh:
    """Mesh a surface model; the validation report is attached as ``mesh.report``."""
    if isinstance(model, HyperellipticCurve):
        return build_hyperelliptic(model, params)
    if isinstance(model, TorusSurface):
        return build_torus(model, params)
    raise ModelError(f"unsupported model type {type(model).__name__}")


# ---------------------------------------------------------------- cache files

_ARRAY_FIELDS = (
    "triangles", "tri_chart", "tri_sheet", "corner_z", "edge_lengths", "vertex_chart",
    "vertex_z", "vertex_sheet", "vertex_cone", "node_tri", "node_bary", "node_w",
    "node_z", "node_y", "cut_edges", "involution", "corner_p", "tri_zc", "tri_yc",
    "tri_rule", "tri_rule_corner",
)


def save_mesh(mesh: BranchedMesh, path: str | Path) -> None:
    """Write an ``.npz`` cache file (atomic rename)."""
    path = Path(path)
    arrays = {k: getattr(mesh, k) for k in _ARRAY_FIELDS if getattr(mesh, k) is not None}
    if mesh.chart_branch is not None:
        arrays["chart_branch_affine"], arrays["chart_branch_infinity"] = mesh.chart_branch
    meta = {
        "version": MESH_FORMAT_VERSION,
        "kind": mesh.kind,
        "genus": mesh.genus,
        "model": mesh.model.to_spec() if mesh.model is not None else None,
        "params": mesh.params,
        "report": mesh.report,
        "content_hash": mesh.content_hash,
    }
    buf = io.BytesIO()
    np.savez_compressed(buf, meta=np.array(json.dumps(meta)), **arrays)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)


def load_mesh(path: str | Path, expected_hash: str | None = None) -> BranchedMesh:
    from .surfaces import surface_from_spec

    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("version") != MESH_FORMAT_VERSION:
            raise ValidationError("mesh cache version mismatch", invariant="cache_version")
        if expected_hash is not None and meta["content_hash"] != expected_hash:
            raise ValidationError("mesh cache hash mismatch", invariant="cache_hash")
        arrays = {k: data[k] for k in _ARRAY_FIELDS if k in data.files}
        chart_branch = None
        if "chart_branch_affine" in data.files:
            chart_branch = (data["chart_branch_affine"], data["chart_branch_infinity"])
    for k in _ARRAY_FIELDS:
        arrays.setdefault(k, None)
    model = surface_from_spec(meta["model"]) if meta["model"] else None
    return BranchedMesh(
        kind=meta["kind"],
        genus=meta["genus"],
        chart_branch=chart_branch,
        model=model,
        params=meta["params"],
        report=meta["report"],
        content_hash=meta["content_hash"],
        **arrays,
    )


def mesh_digest(mesh: BranchedMesh) -> str:
    h = hashlib.sha256()
    for k in ("triangles", "corner_z", "node_w"):
        h.update(np.ascontiguousarray(getattr(mesh, k)).tobytes())
    return h.hexdigest()
