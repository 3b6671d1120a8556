"""A small language for modular graph tensor diagrams, and their evaluation.

Grammar::

    diagram  := vertices ';' edges ';' arcs
    vertices := vertex+                       V1(i,~j) V2(k,~l)
    vertex   := NAME '(' LABEL ',' '~' LABEL ')'
    edges    := (NAME '-' NAME) separated by ',' or spaces
    arcs     := (LABEL '=' LABEL) separated by ','

A vertex ``V(i,~j)`` stands for the 2-form ``psi_i ^ conj(psi_j)``; an edge is
a propagator (the Green kernel, so that a chain of two vertices gives
``A[i,j,k,l]``); an arc identifies a holomorphic label with an
antiholomorphic one and sums over it. Labels not touched by any arc are free
and become output axes in order of appearance.

Evaluation ladder:

1. trees: one Green solve per non-leaf, non-root vertex and index value;
2. one cycle: open it at a vertex, then one back-substitution per mesh vertex
   for the kernel column plus the tree solves of what remains;
3. several independent cycles: dense kernel contraction, allowed only when the
   vertex count is within ``vertex_budget`` and the mesh has at most
   ``dense_limit`` vertices. The refused cost is reported as
   ``V**n * g**(2n)`` (naive multi-sum over n points and all index values).

Trees and cycles integrate each vertex exactly against the P1 fields that
meet there (wedge mass matrices, or quadrature nodes for three or more
fields). The dense path uses lumped vertex loads instead, so on a one-cycle
diagram it differs from the cycle path at O(h^2).
"""

from __future__ import annotations

import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import permutations, product

import numpy as np

from .errors import DiagramCostError, DiagramParseError
from .green import dense_green_oracle
from .state import SurfaceState

_TOKEN = re.compile(r"\s*(?:(?P<name>[A-Za-z_][A-Za-z0-9_]*)|(?P<sym>[(),;~=\-]))")


@dataclass(frozen=True)
class Vertex:
    name: str
    hol: str
    anti: str


@dataclass(frozen=True)
class DiagramExpr:
    vertices: tuple
    edges: tuple  # pairs of vertex indices
    arcs: tuple  # (hol label, anti label)
    text: str = ""

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_loops(self) -> int:
        return len(self.edges) - len(self.vertices) + 1

    def _rep(self) -> dict:
        rep = {}
        for h, a in self.arcs:
            rep[a] = h
        return rep

    def slots(self) -> list:
        """(hol symbol, anti symbol) per vertex after arc identification."""
        rep = self._rep()
        return [(v.hol, rep.get("~" + v.anti, "~" + v.anti)) for v in self.vertices]

    @property
    def free(self) -> list:
        bound = {h for h, _ in self.arcs} | {a for _, a in self.arcs}
        out = []
        for v in self.vertices:
            for lab in (v.hol, "~" + v.anti):
                if lab not in bound:
                    out.append(lab)
        return out

    def neighbors(self, n: int) -> list:
        out = []
        for a, b in self.edges:
            if a == n:
                out.append(b)
            elif b == n:
                out.append(a)
        return out


@dataclass
class DiagramValue:
    value: complex | np.ndarray
    free: list
    cost: dict = field(default_factory=dict)

    @property
    def is_scalar(self) -> bool:
        return not self.free


# ---------------------------------------------------------------- parsing


class _Tokens:
    def __init__(self, text: str, start: int, stop: int):
        self.text = text
        self.items = []
        pos = start
        while pos < stop:
            if text[pos:stop].strip() == "":
                break
            m = _TOKEN.match(text, pos, stop)
            if not m or m.end() == pos:
                col = pos + len(text[pos:stop]) - len(text[pos:stop].lstrip())
                raise DiagramParseError(f"unexpected character {text[col]!r}", col, text)
            kind = "name" if m.group("name") else "sym"
            val = m.group(kind)
            self.items.append((kind, val, m.start(kind)))
            pos = m.end()
        self.i = 0
        self.end = stop

    def peek(self):
        return self.items[self.i] if self.i < len(self.items) else (None, None, self.end)

    def take(self, kind=None, val=None, what=""):
        k, v, p = self.peek()
        if k is None or (kind and k != kind) or (val and v != val):
            raise DiagramParseError(f"expected {what or val or kind}", p, self.text)
        self.i += 1
        return v, p

    def done(self) -> bool:
        return self.i >= len(self.items)


def parse_diagram(text: str) -> DiagramExpr:
    """Parse diagram text; errors carry the column of the offending token."""
    cuts = [m.start() for m in re.finditer(";", text)]
    if len(cuts) == 1:
        cuts.append(len(text))
        text_end = len(text)
    elif len(cuts) == 2:
        text_end = len(text)
    else:
        pos = cuts[2] if len(cuts) > 2 else len(text)
        raise DiagramParseError("expected 'vertices; edges; arcs'", pos, text)
    sections = [(0, cuts[0]), (cuts[0] + 1, cuts[1]), (cuts[1] + 1, text_end)]

    vertices, names, slot_pos = [], {}, {}
    tok = _Tokens(text, *sections[0])
    while not tok.done():
        name, p = tok.take("name", what="vertex name")
        if name in names:
            raise DiagramParseError(f"vertex {name} defined twice", p, text)
        tok.take("sym", "(")
        hol, ph = tok.take("name", what="holomorphic label")
        tok.take("sym", ",")
        tok.take("sym", "~", what="'~' before the antiholomorphic label")
        anti, pa = tok.take("name", what="antiholomorphic label")
        tok.take("sym", ")")
        for lab, lp, side in ((hol, ph, "hol"), ("~" + anti, pa, "anti")):
            if lab in slot_pos:
                raise DiagramParseError(f"label {lab.lstrip('~')} used twice on the {side} side", lp, text)
            slot_pos[lab] = lp
        names[name] = len(vertices)
        vertices.append(Vertex(name, hol, anti))
    if not vertices:
        raise DiagramParseError("no vertices", sections[0][0], text)

    edges = []
    tok = _Tokens(text, *sections[1])
    while not tok.done():
        a, pa = tok.take("name", what="vertex name")
        tok.take("sym", "-")
        b, pb = tok.take("name", what="vertex name")
        for v, p in ((a, pa), (b, pb)):
            if v not in names:
                raise DiagramParseError(f"unknown vertex {v}", p, text)
        if a == b:
            raise DiagramParseError("propagator from a vertex to itself", pa, text)
        edges.append((names[a], names[b]))
        if tok.peek()[1] == ",":
            tok.take()

    arcs, used = [], set()
    tok = _Tokens(text, *sections[2])
    while not tok.done():
        x, px = tok.take("name", what="label")
        tok.take("sym", "=")
        y, py = tok.take("name", what="label")
        if x == y:
            raise DiagramParseError(f"self-arc {x}={y} pairs a slot with itself", py, text)
        sides = {}
        for lab, p in ((x, px), (y, py)):
            if lab in slot_pos and "~" + lab in slot_pos:
                raise DiagramParseError(f"label {lab} is ambiguous", p, text)
            if lab in slot_pos:
                sides[lab] = "hol"
            elif "~" + lab in slot_pos:
                sides[lab] = "anti"
            else:
                raise DiagramParseError(f"unknown label {lab}", p, text)
        if sides[x] == sides[y]:
            raise DiagramParseError(f"arc {x}={y} joins two {sides[x]} slots", py, text)
        h, a = (x, y) if sides[x] == "hol" else (y, x)
        for lab, p in ((x, px), (y, py)):
            if lab in used:
                raise DiagramParseError(f"label {lab} is in two arcs", p, text)
            used.add(lab)
        arcs.append((h, "~" + a))
        if tok.peek()[1] == ",":
            tok.take()

    expr = DiagramExpr(tuple(vertices), tuple(edges), tuple(arcs), text)
    if not _connected(expr):
        raise DiagramParseError("propagator graph is disconnected", sections[1][0], text)
    return expr


def _connected(expr: DiagramExpr) -> bool:
    seen = {0}
    stack = [0]
    while stack:
        n = stack.pop()
        for m in expr.neighbors(n):
            if m not in seen:
                seen.add(m)
                stack.append(m)
    return len(seen) == expr.n_vertices


# ---------------------------------------------------------------- canonical form


def _render(expr: DiagramExpr, order) -> str:
    slots = expr.slots()
    free = set(expr.free)
    names, k = {}, 0
    parts = []
    for new, old in enumerate(order):
        h, a = slots[old]
        labs = []
        for side, lab in enumerate((h, a)):
            if lab in free:
                labs.append(lab)
                continue
            if lab not in names:
                k += 1
                names[lab] = k
            labs.append(("~" if side else "") + f"#{names[lab]}")
        parts.append(f"V{new + 1}({labs[0]},{labs[1]})")
    pos = {old: new for new, old in enumerate(order)}
    edges = sorted(tuple(sorted((pos[a], pos[b]))) for a, b in expr.edges)
    return " ".join(parts) + "; " + ", ".join(f"V{a + 1}-V{b + 1}" for a, b in edges)


def canonical_form(expr: DiagramExpr, max_vertices: int = 7) -> str:
    """String invariant under vertex reordering and renaming of bound labels.

    Bound classes print as ``#k`` in order of first appearance. Free labels
    keep their names. Beyond ``max_vertices`` the given order is used.
    """
    n = expr.n_vertices
    orders = permutations(range(n)) if n <= max_vertices else [tuple(range(n))]
    return min(_render(expr, o) for o in orders)


# ---------------------------------------------------------------- evaluation

_BATCH = "Z"
_NODE = "N"


class _Evaluator:
    """Fields live on mesh vertices. A vertex with at most two incident fields
    is integrated exactly through the wedge mass matrices; more fields fall
    back to products at quadrature nodes."""

    def __init__(self, expr: DiagramExpr, state: SurfaceState):
        self.expr = expr
        self.state = state
        slots = expr.slots()
        symbols = []
        for h, a in slots:
            for s in (h, a):
                if s not in symbols:
                    symbols.append(s)
        if len(symbols) > 24:
            raise DiagramCostError("too many index labels", float(len(symbols)))
        letters = "abcdefghijklmnopqrstuvwxy"
        self.letter = {s: letters[k] for k, s in enumerate(symbols)}
        self.slots = [(self.letter[h], self.letter[a]) for h, a in slots]
        self.count = {}
        for h, a in self.slots:
            for s in (h, a):
                self.count[s] = self.count.get(s, 0) + 1
        self.free = [self.letter[lab] for lab in expr.free]
        self.n_solves = 0

    # per-vertex pieces --------------------------------------------------

    def _diag(self, n, arr):
        h, a = self.slots[n]
        if h == a:
            return "", np.einsum("ii...->...", arr)
        return h + a, arr

    def vertex_loads(self, n):
        return self._diag(n, self.state.loads)

    def leaf_field(self, n):
        return self._diag(n, self.state.solutions)

    def vertex_nodes(self, n):
        basis, mesh = self.state.basis, self.state.mesh
        dens = -2j * (basis.values * mesh.node_w)[:, None, :] * np.conj(basis.values)[None, :, :]
        return self._diag(n, dens)

    def mass_apply(self, n, letters, arr):
        """Load of (vertex 2-form) x field, for every index value of the vertex."""
        g = self.state.genus
        m = self.state.wedge_mass
        lead = arr.shape[:-1]
        flat = arr.reshape(-1, arr.shape[-1]).T
        out = np.empty((g, g) + lead + (arr.shape[-1],), dtype=complex)
        for s in range(g):
            for t in range(g):
                out[s, t] = np.asarray(m[s][t] @ flat).T.reshape(out.shape[2:])
        lt, out = self._diag(n, out)
        return lt + letters, out

    def to_nodes(self, arr):
        p = self.state.interp
        lead = arr.shape[:-1]
        return np.asarray(p @ arr.reshape(-1, arr.shape[-1]).T).T.reshape(lead + (p.shape[0],))

    def solve(self, load):
        lead = load.shape[:-1]
        flat = load.reshape(-1, load.shape[-1]).T
        self.n_solves += flat.shape[1]
        return self.state.laplacian.solve(flat).T.reshape(lead + (load.shape[-1],))

    # trees ----------------------------------------------------------------

    def _subtree(self, n, parent, blocked):
        out, stack = [n], [(n, parent)]
        while stack:
            v, p = stack.pop()
            for m in self.expr.neighbors(v):
                if m != p and m not in blocked and m not in out:
                    out.append(m)
                    stack.append((m, v))
        return out

    def _keep(self, verts, letters_present):
        inside = {}
        for v in verts:
            for s in self.slots[v]:
                inside[s] = inside.get(s, 0) + 1
        keep = [s for s in letters_present
                if s != _BATCH and (inside.get(s, 0) < self.count[s] or s in self.free)]
        if _BATCH in letters_present:
            keep.append(_BATCH)
        return "".join(dict.fromkeys(keep))

    def _fields(self, n, parent, blocked, extra):
        out = []
        for m in self.expr.neighbors(n):
            if m != parent and m not in blocked:
                out.append(self.field(m, n, blocked, extra))
        out.extend(extra.get(n, []))
        return out

    def _combine(self, n, fields, keep, root):
        """Integrate the vertex 2-form against the fields; keep=letters to retain."""
        if not fields and root:
            lt, b = self.vertex_loads(n)
            return np.einsum(f"{lt}V->{keep}", b)
        if len(fields) == 1:
            fl, fa = fields[0]
            if root:
                lt, b = self.vertex_loads(n)
                return np.einsum(f"{lt}V,{fl}V->{keep}", b, fa, optimize=True)
            lt, load = self.mass_apply(n, fl, fa)
            return np.einsum(f"{lt}V->{keep}V", load)
        if len(fields) == 2 and root:
            (f0, a0), (f1, a1) = fields
            lt, load = self.mass_apply(n, f1, a1)
            return np.einsum(f"{lt}V,{f0}V->{keep}", load, a0, optimize=True)
        lt, dens = self.vertex_nodes(n)
        facs = [(lt, dens)] + [(fl, self.to_nodes(fa)) for fl, fa in fields]
        if root:
            spec = ",".join(f + _NODE for f, _ in facs) + "->" + keep
            return np.einsum(spec, *[x for _, x in facs], optimize=True)
        spec = ",".join(f + _NODE for f, _ in facs) + "->" + keep + _NODE
        prod = np.einsum(spec, *[x for _, x in facs], optimize=True)
        lead = prod.shape[:-1]
        flat = prod.reshape(-1, prod.shape[-1]).T
        return np.asarray(self.state.interp.T @ flat).T.reshape(lead + (self.state.mesh.n_vertices,))

    def _present(self, n, fields):
        return "".join(dict.fromkeys("".join(self.slots[n]) + "".join(f for f, _ in fields)))

    def field(self, n, parent, blocked=frozenset(), extra=None):
        """Green field of the subtree hanging below n (away from parent)."""
        extra = extra or {}
        fields = self._fields(n, parent, blocked, extra)
        if not fields:
            return self.leaf_field(n)
        keep = self._keep(self._subtree(n, parent, blocked), self._present(n, fields))
        return keep, self.solve(self._combine(n, fields, keep, root=False))

    def root_value(self, r, blocked=frozenset(), extra=None):
        extra = extra or {}
        fields = self._fields(r, None, blocked, extra)
        keep = self._keep(self._subtree(r, None, blocked), self._present(r, fields))
        return keep, self._combine(r, fields, keep, root=True)

    def output(self, letters, arr):
        target = "".join(self.free)
        return np.einsum(f"{letters}->{target}", arr) if letters != target else arr


def _find_cycle(expr: DiagramExpr) -> list:
    """Vertices on the unique cycle of a unicyclic graph."""
    seen = set()
    edges = list(expr.edges)
    pairs = [tuple(sorted(e)) for e in edges]
    for e in set(pairs):
        if pairs.count(e) > 1:
            return list(e)
    deg = {n: len(expr.neighbors(n)) for n in range(expr.n_vertices)}
    alive = set(range(expr.n_vertices))
    changed = True
    while changed:
        changed = False
        for n in list(alive):
            if deg[n] <= 1:
                alive.discard(n)
                seen.add(n)
                for m in expr.neighbors(n):
                    if m in alive:
                        deg[m] -= 1
                changed = True
    return sorted(alive)


def eval_diagram(expr: DiagramExpr | str, state: SurfaceState, *, root: int = 0,
                 open_at: int | None = None, vertex_budget: int = 4, dense_limit: int = 500,
                 threads: int = 1, chunk: int = 64) -> DiagramValue:
    """Evaluate a parsed diagram on a solved surface."""
    if isinstance(expr, str):
        expr = parse_diagram(expr)
    ev = _Evaluator(expr, state)
    loops = expr.n_loops
    if loops == 0:
        letters, val = ev.root_value(root)
        out = ev.output(letters, val)
        cost = {"strategy": "tree", "solves": ev.n_solves, "dense_kernel": False}
    elif loops == 1:
        out = _eval_cycle(ev, open_at, threads, chunk)
        cost = {"strategy": "cycle", "solves": ev.n_solves, "dense_kernel": False}
    else:
        out = _eval_dense(ev, vertex_budget, dense_limit)
        cost = {"strategy": "dense", "solves": ev.n_solves, "dense_kernel": True}
    if not expr.free:
        out = complex(out)
    return DiagramValue(out, expr.free, cost)


def _eval_cycle(ev: _Evaluator, open_at, threads, chunk):
    """tr(M_0 G M_1 G ... G) with the trace taken over hat functions at n0.

    For a batch of mesh vertices p the kernel column G e_p is attached at one
    cycle neighbour of n0, carried around the cycle back to n0, and paired
    there with the hat function at p. Every vertex is then integrated the
    same way, so the value does not depend on where the cycle is opened.
    """
    expr = ev.expr
    cycle = _find_cycle(expr)
    n0 = cycle[0] if open_at is None else open_at
    if n0 not in cycle:
        raise ValueError(f"vertex {n0} is not on the cycle")
    blocked = frozenset([n0])
    attach = {}
    for m in expr.neighbors(n0):
        comp = frozenset(ev._subtree(m, n0, blocked))
        attach.setdefault(comp, []).append(m)
    trees, cyc = [], None
    for comp, ends in attach.items():
        if len(ends) == 1:
            trees.append(ev.field(ends[0], n0, blocked))
        else:
            cyc = ends
    first, last = cyc[0], cyc[-1]
    nv = ev.state.mesh.n_vertices
    blocks = [np.arange(s, min(s + chunk, nv)) for s in range(0, nv, chunk)]

    def run(pts):
        eye = np.zeros((pts.size, nv))
        eye[np.arange(pts.size), pts] = 1.0
        k = ev.state.laplacian.solve(eye.T).T
        ev.n_solves += pts.size
        around = ev.field(last, n0, blocked, {first: [(_BATCH, k)]})
        fields = trees + [around, (_BATCH, eye)]
        keep = ev._keep(range(expr.n_vertices), ev._present(n0, fields))
        val = ev._combine(n0, fields, keep, root=True)
        return ev.output(keep.replace(_BATCH, ""), np.einsum(f"{keep}->{keep.replace(_BATCH, '')}", val))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, blocks))
    else:
        parts = [run(b) for b in blocks]
    total = parts[0]
    for p in parts[1:]:  # fixed order, so the result does not depend on threads
        total = total + p
    return total


def _eval_dense(ev: _Evaluator, vertex_budget, dense_limit):
    expr = ev.expr
    n = expr.n_vertices
    nv = ev.state.mesh.n_vertices
    g = ev.state.genus
    estimate = float(nv) ** n * float(g) ** (2 * n)
    if n > vertex_budget or nv > dense_limit:
        raise DiagramCostError(
            f"{expr.n_loops}-loop diagram on {n} vertices needs a dense kernel "
            f"(budget {vertex_budget} vertices, {dense_limit} mesh vertices; estimate {estimate:.3g})",
            estimate)
    kern = dense_green_oracle(ev.state.mesh, ev.state.laplacian).matrix
    points = "ABCDEFGHIJKLMOPQRSTU"
    loads = [ev.vertex_loads(v) for v in range(n)]
    mult = {}
    for x, y in expr.edges:
        key = (min(x, y), max(x, y))
        mult[key] = mult.get(key, 0) + 1
    kernels = [(points[x] + points[y], kern**k) for (x, y), k in mult.items()]
    letters = "".join(dict.fromkeys("".join(lt for lt, _ in loads)))
    spec = ",".join([points[v] for v in range(n)] + [f for f, _ in kernels]) + "->"
    path = None
    out = np.zeros((g,) * len(ev.free), dtype=complex)
    # one pure point contraction per index assignment keeps einsum on matrix products
    for values in product(range(g), repeat=len(letters)):
        at = dict(zip(letters, values))
        vecs = [b[tuple(at[c] for c in lt)] for lt, b in loads]
        ops = vecs + [k for _, k in kernels]
        if path is None:
            path = np.einsum_path(spec, *ops, optimize="optimal")[0]
        out[tuple(at[c] for c in ev.free)] += np.einsum(spec, *ops, optimize=path)
    return out
