"""Seeded graph-cut segmentation with a fully traced max-flow.

The image is an s-t graph: 8-neighbor arcs weighted by a quadratic-spline
similarity of pixel intensities, terminal arcs weighted by seed-estimated
negative log-likelihoods, and hard seed arcs one above the largest neighbor
sum. The min cut is found by an augmenting-path max-flow organized in grow,
augment, and adopt stages.

Because every capacity is a degree-<=2 polynomial in the pixels once its
spline piece is fixed, and the flow algorithm only ever adds, subtracts, and
compares capacities, the whole execution can be replayed with capacities as
polynomials in the line parameter tau: each branch taken emits one
:class:`~seginfer.events.TauConstraint`, and the conjunction of those
constraints (plus seed choice, spline-piece membership, and the max-neighbor
dominance conditions) is the selection event the inference conditions on.

The plain numeric run and the traced run share one engine: a numeric run is
just the traced run with constant polynomials, which keeps the two control
flows aligned to the floating-point noise floor.
"""

from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import InputError, SegmentationError, TrackingBugError
from .events import TauConstraint, TauPoly
from .images import Image, NoiseModel, SegmentationResult

#: residuals at or below this are saturated; capacities here are O(1)-O(50)
EPS_FLOW = 1e-10

_OFFSETS = [(-1, -1), (-1, 0), (-1, 1), (0, -1),
            (0, 1), (1, -1), (1, 0), (1, 1)]
_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class GraphCutParams:
    """Similarity scale, likelihood weight, and seed specification.

    ``seeds`` is ``"auto"`` (largest pixel seeds the object, smallest the
    background, both recorded as selection events) or an explicit pair of
    disjoint pixel-index collections. ``piece_rule`` selects how the spline
    piece condition is recorded: ``"fixed-sigma"`` compares the squared
    difference against the constant sigma^2; ``"sample-variance"`` uses the
    data-dependent sample-variance matrix form.
    """

    sigma: float = 0.1
    lam: float = 1.0
    seeds: object = "auto"
    piece_rule: str = "fixed-sigma"

    def __post_init__(self):
        if not 0.0 < self.sigma or self.sigma == 1.0:
            raise InputError("similarity sigma must be positive and != 1")
        if self.piece_rule not in ("fixed-sigma", "sample-variance"):
            raise InputError(f"unknown piece rule {self.piece_rule!r}")

    def to_dict(self) -> dict:
        return {"sigma": self.sigma, "lambda": self.lam,
                "seeds": "auto" if self.seeds == "auto" else "explicit",
                "piece_rule": self.piece_rule}


class SegGraph:
    """Pixel graph with capacities described symbolically per arc.

    Arc metadata records which weight formula (and which spline piece)
    produced each capacity, so capacities can be rebuilt as tau-polynomials
    along any line through the data.
    """

    def __init__(self, img: Image, params: GraphCutParams, noise: NoiseModel):
        if noise.kind != "isotropic":
            raise InputError("graph-cut terminal weights need an isotropic noise model")
        self.width, self.height, self.n = img.width, img.height, img.n
        self.params = params
        self.sigma2_ob = self.sigma2_bg = noise.sigma2
        self.s_node = self.n
        self.t_node = self.n + 1
        x = img.pixels

        self.obj_seeds, self.bkg_seeds = self._pick_seeds(x, params.seeds)
        seed_set = set(self.obj_seeds) | set(self.bkg_seeds)

        # arc tables
        self.arc_u: list[int] = []
        self.arc_v: list[int] = []
        self.arc_sister: list[int] = []
        self.arc_meta: list[tuple] = []
        self.node_arcs: list[list[int]] = [[] for _ in range(self.n + 2)]

        def add_pair(u, v, meta_fwd, meta_rev):
            i = len(self.arc_u)
            self.arc_u += [u, v]
            self.arc_v += [v, u]
            self.arc_sister += [i + 1, i]
            self.arc_meta += [meta_fwd, meta_rev]
            self.node_arcs[u].append(i)
            self.node_arcs[v].append(i + 1)
            return i

        # neighbor arcs: one sister pair per unordered adjacent pixel pair,
        # created in row-major order with a fixed offset scan
        sig = params.sigma
        sig2 = sig * sig
        self.pair_pieces: list[tuple[int, int, int]] = []  # (p, q, piece), p < q
        self.node_neighbor_arcs: list[list[int]] = [[] for _ in range(self.n)]
        pair_arc: dict[tuple[int, int], int] = {}
        for p in range(self.n):
            r, c = divmod(p, self.width)
            for dy, dx in _OFFSETS:
                r2, c2 = r + dy, c + dx
                if not (0 <= r2 < self.height and 0 <= c2 < self.width):
                    continue
                q = r2 * self.width + c2
                key = (min(p, q), max(p, q))
                if key in pair_arc:
                    a = pair_arc[key]
                    self.node_neighbor_arcs[p].append(
                        a if self.arc_u[a] == p else self.arc_sister[a])
                    continue
                lo, hi = key
                dist = _SQRT2 if (dy and dx) else 1.0
                d = x[lo] - x[hi]
                if d * d <= sig2:
                    piece = 1
                    g = (math.exp(-0.5) - 1.0) / (sig2 * dist)
                    meta = ("pair", lo, hi, 0.0, g, 1.0 / dist)
                elif x[lo] <= x[hi]:
                    piece = 2
                    g = (math.exp(-0.5) - math.exp(-1.0 / (2.0 * sig2))) \
                        / ((sig - 1.0) ** 2 * dist)
                    meta = ("pair", hi, lo, -1.0, g, math.exp(-1.0 / (2.0 * sig2)) / dist)
                else:
                    piece = 3
                    g = (math.exp(-0.5) - math.exp(-1.0 / (2.0 * sig2))) \
                        / ((sig - 1.0) ** 2 * dist)
                    meta = ("pair", lo, hi, -1.0, g, math.exp(-1.0 / (2.0 * sig2)) / dist)
                a = add_pair(lo, hi, meta, meta)  # weight is symmetric in direction
                pair_arc[key] = a
                self.pair_pieces.append((lo, hi, piece))
                self.node_neighbor_arcs[p].append(
                    a if self.arc_u[a] == p else self.arc_sister[a])

        # the hard-seed capacity is one above the largest per-pixel sum of
        # neighbor weights; the argmax itself is a recorded selection
        caps0 = self.arc_polys(x, np.zeros(self.n))
        k_values = np.array([sum(caps0[a].c for a in self.node_neighbor_arcs[p])
                             for p in range(self.n)])
        self.kmax_node = int(np.argmax(k_values))

        # terminal arcs: cutting (S,q) assigns q to background, so (S,q)
        # carries the background NLL and (q,T) the object NLL; seeds get the
        # hard capacity toward their own terminal and no opposing arc
        lam = params.lam
        const_ob = lam * math.log(2.0 * math.pi * self.sigma2_ob)
        const_bg = lam * math.log(2.0 * math.pi * self.sigma2_bg)
        self.offset = max(0.0, -const_ob, -const_bg)
        for q in range(self.n):
            if q in seed_set:
                continue
            add_pair(self.s_node, q,
                     ("term", q, self.bkg_seeds, 0.5 / self.sigma2_bg,
                      const_bg + self.offset),
                     ("zero",))
            add_pair(q, self.t_node,
                     ("term", q, self.obj_seeds, 0.5 / self.sigma2_ob,
                      const_ob + self.offset),
                     ("zero",))
        for q in self.obj_seeds:
            add_pair(self.s_node, q, ("kmax",), ("zero",))
        for q in self.bkg_seeds:
            add_pair(q, self.t_node, ("kmax",), ("zero",))

        self.cap0 = [p.c for p in self.arc_polys(x, np.zeros(self.n))]

    def _pick_seeds(self, x: np.ndarray, seeds) -> tuple[tuple, tuple]:
        if seeds == "auto":
            smax, smin = int(np.argmax(x)), int(np.argmin(x))
            if smax == smin:
                raise SegmentationError("constant image: seed pixels coincide")
            self.auto_seeds = True
            return (smax,), (smin,)
        self.auto_seeds = False
        obj, bkg = (tuple(int(i) for i in s) for s in seeds)
        if not obj or not bkg:
            raise InputError("seed sets must be nonempty")
        if set(obj) & set(bkg):
            raise InputError("seed sets overlap")
        if any(not 0 <= i < self.n for i in obj + bkg):
            raise InputError("seed index out of range")
        return obj, bkg

    def arc_polys(self, z: np.ndarray, y: np.ndarray) -> list[TauPoly]:
        """Every arc capacity as a polynomial along x(tau) = z + tau*y."""
        polys: list[TauPoly | None] = [None] * len(self.arc_meta)
        kmax_ids = []
        for a, meta in enumerate(self.arc_meta):
            kind = meta[0]
            if kind == "pair":
                _, i, j, shift, g, h = meta
                dz = z[i] - z[j] + shift
                dy = y[i] - y[j]
                polys[a] = TauPoly(g * dy * dy, 2.0 * g * dz * dy, g * dz * dz + h)
            elif kind == "term":
                _, q, seed_idx, coef, const = meta
                sz = float(np.mean(z[list(seed_idx)]))
                sy = float(np.mean(y[list(seed_idx)]))
                dz, dy = z[q] - sz, y[q] - sy
                polys[a] = TauPoly(coef * dy * dy, 2.0 * coef * dz * dy,
                                   coef * dz * dz + const)
            elif kind == "zero":
                polys[a] = TauPoly(0.0, 0.0, 0.0)
            else:
                kmax_ids.append(a)
        if kmax_ids:
            k = TauPoly(0.0, 0.0, 1.0)
            for a in self.node_neighbor_arcs[self.kmax_node]:
                k = k + polys[a]
            for a in kmax_ids:
                polys[a] = k
        return polys  # type: ignore[return-value]

    def selection_constraints(self, z: np.ndarray, y: np.ndarray) -> list[TauConstraint]:
        """Pre-flow conditions: seed choice, spline pieces, max-neighbor-sum."""
        cons: list[TauConstraint] = []
        if self.auto_seeds:
            smax, smin = self.obj_seeds[0], self.bkg_seeds[0]
            for p in range(self.n):
                if p != smax:
                    cons.append(TauConstraint(
                        TauPoly(0.0, y[smax] - y[p], z[smax] - z[p]),
                        ">=", origin="seed:max"))
                if p != smin:
                    cons.append(TauConstraint(
                        TauPoly(0.0, y[smin] - y[p], z[smin] - z[p]),
                        "<=", origin="seed:min"))
        sig2 = self.params.sigma ** 2
        if self.params.piece_rule == "sample-variance":
            n = self.n
            yy = (float(y @ y) - float(y.sum()) ** 2 / n) / (n - 1)
            zy = (float(z @ y) - float(z.sum()) * float(y.sum()) / n) / (n - 1)
            zz = (float(z @ z) - float(z.sum()) ** 2 / n) / (n - 1)
        for p, q, piece in self.pair_pieces:
            dz, dy = z[p] - z[q], y[p] - y[q]
            if self.params.piece_rule == "fixed-sigma":
                gap = TauPoly(dy * dy, 2.0 * dz * dy, dz * dz - sig2)
            else:
                gap = TauPoly(dy * dy - yy, 2.0 * (dz * dy - zy), dz * dz - zz)
            if piece == 1:
                cons.append(TauConstraint(gap, "<=", origin="gc:piece"))
            else:
                cons.append(TauConstraint(gap, ">", origin="gc:piece"))
                cons.append(TauConstraint(
                    TauPoly(0.0, dy, dz), "<=" if piece == 2 else ">",
                    origin="gc:piece-sign"))
        polys = self.arc_polys(z, y)
        k_star = TauPoly(0.0, 0.0, 0.0)
        for a in self.node_neighbor_arcs[self.kmax_node]:
            k_star = k_star + polys[a]
        for p in range(self.n):
            if p == self.kmax_node:
                continue
            k_p = TauPoly(0.0, 0.0, 0.0)
            for a in self.node_neighbor_arcs[p]:
                k_p = k_p + polys[a]
            cons.append(TauConstraint(k_star - k_p, ">=", origin="gc:kmax"))
        return cons

    def cut_cost(self, obj_mask: np.ndarray) -> float:
        """Cost of the cut putting object pixels (plus S) on the source side."""
        side = np.zeros(self.n + 2, dtype=bool)
        side[:self.n] = obj_mask
        side[self.s_node] = True
        total = 0.0
        for a, cap in enumerate(self.cap0):
            if side[self.arc_u[a]] and not side[self.arc_v[a]]:
                total += cap
        return total

    def seeds_dict(self) -> dict:
        return {"object": list(self.obj_seeds), "background": list(self.bkg_seeds)}


def build_graph(img: Image, params: GraphCutParams, noise: NoiseModel) -> SegGraph:
    """Assemble the weighted s-t graph for one image."""
    return SegGraph(img, params, noise)


# ---------------------------------------------------------------------------
# flow engine (shared by the numeric run and the traced run)

class _ReplayInfeasible(Exception):
    """A forced replay ran off-script."""


class FlowRun(NamedTuple):
    obj_mask: np.ndarray
    flow_value: float
    decisions: list[int]
    origins: list[str]
    values: list[float]
    polys: list[TauPoly] | None   # per-comparison polynomials when recording
    rels: list[str] | None


_TREE_NONE, _TREE_S, _TREE_T = 0, 1, 2


def run_flow(g: SegGraph, caps: list[TauPoly], tau: float,
             record: bool = False, forced: list[int] | None = None) -> FlowRun:
    """Run the grow/augment/adopt max-flow over polynomial capacities.

    Every comparison is decided by evaluating its polynomial at ``tau``
    (``forced`` overrides the outcomes for replay experiments). Identically
    zero polynomials are never informative and never consulted as forced
    decisions, which keeps replays aligned. Deterministic tie-breaking
    throughout: arcs are scanned in construction order, the active queue is
    FIFO, equal bottleneck residuals keep the earlier arc, orphans are
    processed in ascending node order.
    """
    arc_u, arc_v, arc_sister = g.arc_u, g.arc_v, g.arc_sister
    n_nodes = g.n + 2
    S, T = g.s_node, g.t_node
    res = [[p.a, p.b, p.c] for p in caps]

    tree = [_TREE_NONE] * n_nodes
    tree[S], tree[T] = _TREE_S, _TREE_T
    parent = [-1] * n_nodes
    active = deque((S, T))
    decisions: list[int] = []
    origins: list[str] = []
    values: list[float] = []
    polys: list[TauPoly] = [] if record else None
    rels: list[str] = [] if record else None
    last_recorded: dict[tuple, tuple] = {}
    forced_pos = [0]
    flow_value = 0.0
    augmentations = 0

    def evalp(r):
        return (r[0] * tau + r[1]) * tau + r[2]

    def decide_usable(a: int, origin: str) -> bool:
        r = res[a]
        if r[0] == 0.0 and r[1] == 0.0 and r[2] == 0.0:
            return False
        v = evalp(r)
        out = v > EPS_FLOW
        if forced is not None:
            if forced_pos[0] >= len(forced):
                raise _ReplayInfeasible("decision list exhausted")
            out = bool(forced[forced_pos[0]])
            forced_pos[0] += 1
        decisions.append(1 if out else 0)
        origins.append(origin)
        values.append(v)
        if record:
            # the implemented branch predicate is value > EPS_FLOW, so the
            # recorded condition carries the shift; this keeps constraints
            # satisfiable when a capacity is genuinely positive but tiny
            key = ("u", a)
            state = (r[0], r[1], r[2], out)
            if last_recorded.get(key) != state:
                last_recorded[key] = state
                polys.append(TauPoly(r[0], r[1], r[2] - EPS_FLOW))
                rels.append(">" if out else "<=")
        return out

    def decide_less(a_cur: int, a_new: int, origin: str) -> bool:
        ra, rb = res[a_cur], res[a_new]
        d = [rb[0] - ra[0], rb[1] - ra[1], rb[2] - ra[2]]
        if d[0] == 0.0 and d[1] == 0.0 and d[2] == 0.0:
            return False
        v = evalp(d)
        out = v < 0.0
        if forced is not None:
            if forced_pos[0] >= len(forced):
                raise _ReplayInfeasible("decision list exhausted")
            out = bool(forced[forced_pos[0]])
            forced_pos[0] += 1
        decisions.append(1 if out else 0)
        origins.append(origin)
        values.append(v)
        if record:
            polys.append(TauPoly(d[0], d[1], d[2]))
            rels.append("<" if out else ">=")
        return out

    def incident_grow(p: int):
        # S-tree grows along arcs out of p; T-tree along arcs into p
        if tree[p] == _TREE_S:
            for a in g.node_arcs[p]:
                yield a, arc_v[a]
        else:
            for a in g.node_arcs[p]:
                yield arc_sister[a], arc_v[a]

    def rooted(q: int) -> bool:
        steps = 0
        while q != S and q != T:
            a = parent[q]
            if a < 0:
                return False
            q = arc_u[a] if tree[q] == _TREE_S else arc_v[a]
            steps += 1
            if steps > n_nodes:
                return False
        return True

    while True:
        # ---- grow
        conn = -1
        while active:
            p = active[0]
            if tree[p] == _TREE_NONE:
                active.popleft()
                continue
            for a, q in incident_grow(p):
                if not decide_usable(a, "gc:grow"):
                    continue
                if tree[q] == _TREE_NONE:
                    tree[q] = tree[p]
                    parent[q] = a
                    active.append(q)
                elif tree[q] != tree[p]:
                    conn = a  # oriented source side -> sink side by construction
                    break
            if conn >= 0:
                break
            active.popleft()
        if conn < 0:
            break  # no augmenting path remains

        # ---- augment
        augmentations += 1
        if augmentations > 200000:
            raise TrackingBugError("augmentation count exploded", "gc:augment")
        path = []
        node = arc_u[conn]
        chain = []
        while node != S:
            chain.append(parent[node])
            node = arc_u[parent[node]]
        path.extend(reversed(chain))
        path.append(conn)
        node = arc_v[conn]
        while node != T:
            path.append(parent[node])
            node = arc_v[parent[node]]

        m = path[0]
        for a in path[1:]:
            if decide_less(m, a, "gc:augment"):
                m = a
        delta = res[m][:]
        dval = evalp(delta)
        if dval <= 0.0:
            if forced is not None:
                raise _ReplayInfeasible("nonpositive bottleneck")
            raise TrackingBugError(
                f"nonpositive bottleneck {dval:.3e} in augment", "gc:augment")
        flow_value += dval
        for a in path:
            ra, rs = res[a], res[arc_sister[a]]
            ra[0] -= delta[0]; ra[1] -= delta[1]; ra[2] -= delta[2]
            rs[0] += delta[0]; rs[1] += delta[1]; rs[2] += delta[2]

        orphans: list[int] = []
        for a in path:
            if decide_usable(a, "gc:augment"):
                continue  # still has residual
            u, v = arc_u[a], arc_v[a]
            if tree[u] == _TREE_S and tree[v] == _TREE_S and parent[v] == a:
                parent[v] = -1
                heapq.heappush(orphans, v)
            elif tree[u] == _TREE_T and tree[v] == _TREE_T and parent[u] == a:
                parent[u] = -1
                heapq.heappush(orphans, u)

        # ---- adopt
        while orphans:
            o = heapq.heappop(orphans)
            side = tree[o]
            found = -1
            for a in g.node_arcs[o]:
                q = arc_v[a]
                if tree[q] != side:
                    continue
                # parent-ward arc: into o for the S tree, out of o for the T tree
                b = arc_sister[a] if side == _TREE_S else a
                if decide_usable(b, "gc:adopt") and rooted(q):
                    found = b
                    break
            if found >= 0:
                parent[o] = found
                continue
            for a in g.node_arcs[o]:
                q = arc_v[a]
                if tree[q] != side:
                    continue
                b = arc_sister[a] if side == _TREE_S else a
                if decide_usable(b, "gc:adopt") and q not in active:
                    active.append(q)
                if side == _TREE_S and parent[q] == a:
                    parent[q] = -1
                    heapq.heappush(orphans, q)
                elif side == _TREE_T and parent[q] == arc_sister[a]:
                    parent[q] = -1
                    heapq.heappush(orphans, q)
            tree[o] = _TREE_NONE
            parent[o] = -1

    if forced is not None and forced_pos[0] != len(forced):
        raise _ReplayInfeasible("decisions left over")
    obj_mask = np.array([tree[p] == _TREE_S for p in range(g.n)])
    return FlowRun(obj_mask, flow_value, decisions, origins, values, polys, rels)


# ---------------------------------------------------------------------------
# public operations

@dataclass
class AlgorithmTrace:
    """Ordered selection-event record of one traced segmentation run."""

    constraints: list[TauConstraint]
    decisions: list[int]
    values: list[float]
    flow_value: float
    counts_by_stage: dict = field(default_factory=dict)

    def count(self) -> int:
        return len(self.constraints)


def _numeric_caps(g: SegGraph) -> list[TauPoly]:
    return [TauPoly(0.0, 0.0, c) for c in g.cap0]


def maxflow_segment(g: SegGraph) -> SegmentationResult:
    """Minimum s-t cut partition; object is the source side."""
    run = run_flow(g, _numeric_caps(g), 0.0)
    return _result_from_mask(g, run.obj_mask)


def _result_from_mask(g: SegGraph, obj_mask: np.ndarray) -> SegmentationResult:
    return SegmentationResult(
        object_idx=np.flatnonzero(obj_mask),
        background_idx=np.flatnonzero(~obj_mask),
        algo="gc",
        params=g.params.to_dict(),
        seeds=g.seeds_dict(),
    )


def trace_segment(g: SegGraph, z: np.ndarray, y: np.ndarray, tau_hat: float,
                  expected: FlowRun | None = None
                  ) -> tuple[SegmentationResult, AlgorithmTrace]:
    """Re-run the max-flow with capacities as polynomials along z + tau*y.

    When ``expected`` (a plain numeric run) is supplied, any divergence in
    the branch decisions or the final partition is a hard tracking bug,
    reported with the first diverging comparison's origin.
    """
    pre = g.selection_constraints(z, y)
    run = run_flow(g, g.arc_polys(z, y), tau_hat, record=True)
    if expected is not None:
        if run.decisions != expected.decisions:
            k = next(i for i, (d1, d2) in
                     enumerate(zip(run.decisions, expected.decisions)) if d1 != d2)
            raise TrackingBugError(
                f"traced run diverged at comparison {k}", run.origins[k])
        if not np.array_equal(run.obj_mask, expected.obj_mask):
            raise TrackingBugError("traced run produced a different partition",
                                   "gc:partition")
    flow_cons = [TauConstraint(p, r, origin="gc:flow")
                 for p, r in zip(run.polys, run.rels)]
    constraints = pre + flow_cons
    counts: dict[str, int] = {}
    for con in constraints:
        counts[con.origin] = counts.get(con.origin, 0) + 1
    trace = AlgorithmTrace(constraints=constraints, decisions=run.decisions,
                           values=run.values, flow_value=run.flow_value,
                           counts_by_stage=counts)
    return _result_from_mask(g, run.obj_mask), trace


def gc_signature(img: Image, params: GraphCutParams, noise: NoiseModel) -> tuple:
    """Everything that identifies the selection event of one plain run."""
    g = build_graph(img, params, noise)
    run = run_flow(g, _numeric_caps(g), 0.0)
    return ("gc", g.obj_seeds, g.bkg_seeds, tuple(g.pair_pieces), g.kmax_node,
            tuple(run.decisions), tuple(bool(b) for b in run.obj_mask))
