"""Adic order on path windows, successor dynamics, arcs, and the flow.

A path window fixes one edge per level on a finite stretch of the
diagram.  Two windows on the same leaf (same tail conventions and the
same source vertex at the top level) compare lexicographically from the
top: the highest level at which they differ decides, by the up-rank of
the edges there.  The successor map is the usual odometer step: bump the
lowest non-maximal edge and reset everything below it to the minimal
choice; a window whose edges are all maximal has no successor and the
operations report that loudly instead of extending the window.

Markovian arcs are the order intervals obtained by freeing all levels
below some cut; every half-open order interval [start, end) decomposes
greedily into maximal Markovian arcs, which is what makes integrals
along the flow cheap.  The vertical flow itself advances a point by a
prescribed amount of plus-measure time, consuming whole arcs and
refining the window downward (through the diagram's extension rule)
when the target time falls inside an atom.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .diagram import Diagram

LESS = "less"
EQUAL = "equal"
GREATER = "greater"
INCOMPARABLE = "incomparable"


class WindowExhaustedError(RuntimeError):
    """An orbit or flow ran off the top of its window."""


# -- path windows ------------------------------------------------------------


@dataclass(frozen=True)
class PathWindow:
    """One edge per level on [lo, hi], with tail conventions at both ends.

    ``edges[i]`` is the edge id at level ``lo + i``.  Interior
    compatibility (the target of each edge is the source of the edge one
    level down) is checked at construction.  ``top_tail`` is ``min``,
    ``max`` or ``("vertex", v)``; an explicit vertex must equal the
    source of the top edge.  ``bottom_tail`` (``min`` or ``max``) says
    how the path continues when the window is refined downward.
    """

    diagram: Diagram
    lo: int
    hi: int
    edges: tuple
    top_tail: object = "min"
    bottom_tail: str = "min"

    def __post_init__(self):
        object.__setattr__(self, "edges", tuple(int(e) for e in self.edges))
        if len(self.edges) != self.hi - self.lo + 1:
            raise ValueError("edge count does not match window length")
        for n in range(self.lo, self.hi + 1):
            g = self.diagram.graph_at(n)
            if not 0 <= self.edge_at(n) < g.n_edges:
                raise ValueError(f"edge id {self.edge_at(n)} out of range at level {n}")
        for n in range(self.lo, self.hi):
            above = self.diagram.graph_at(n + 1)
            below = self.diagram.graph_at(n)
            if above.tgt(self.edge_at(n + 1)) != below.src(self.edge_at(n)):
                raise ValueError(f"edges at levels {n + 1} and {n} do not chain")
        if isinstance(self.top_tail, tuple):
            kind, v = self.top_tail
            if kind != "vertex":
                raise ValueError(f"unknown top tail {self.top_tail!r}")
            if int(v) != self.top_source():
                raise ValueError(f"explicit top vertex {v} does not match the "
                                 f"top edge source {self.top_source()}")
        if self.bottom_tail not in ("min", "max"):
            raise ValueError(f"unknown bottom tail {self.bottom_tail!r}")

    def edge_at(self, n: int) -> int:
        if not self.lo <= n <= self.hi:
            raise ValueError(f"level {n} outside path window [{self.lo}, {self.hi}]")
        return self.edges[n - self.lo]

    def vertex_at(self, n: int) -> int:
        """Vertex the path occupies at level n, for n in [lo-1, hi]."""
        if n == self.hi:
            return self.diagram.graph_at(self.hi).src(self.edge_at(self.hi))
        return self.diagram.graph_at(n + 1).tgt(self.edge_at(n + 1))

    def top_source(self) -> int:
        return self.vertex_at(self.hi)

    def same_leaf(self, other: "PathWindow") -> bool:
        return (self.top_tail == other.top_tail
                and self.bottom_tail == other.bottom_tail
                and self.top_source() == other.top_source())

    def _check_window(self, other: "PathWindow"):
        if (self.diagram, self.lo, self.hi) != (other.diagram, other.lo, other.hi):
            raise ValueError("window mismatch: paths live on different windows")

    def with_edges(self, new_edges) -> "PathWindow":
        return PathWindow(self.diagram, self.lo, self.hi, tuple(new_edges),
                          self.top_tail, self.bottom_tail)

    def refined(self, new_lo: int) -> "PathWindow":
        """Extend the window down to new_lo, filling by the bottom tail."""
        if new_lo > self.lo:
            raise ValueError("refinement must lower the window")
        fill = _extremal_fill(self.diagram, new_lo, self.lo - 1,
                              self.vertex_at(self.lo - 1),
                              "min" if self.bottom_tail == "min" else "max")
        return PathWindow(self.diagram, new_lo, self.hi, fill + self.edges,
                          self.top_tail, self.bottom_tail)

    def to_json(self) -> list:
        return [[n, self.edge_at(n)] for n in range(self.lo, self.hi + 1)]

    @classmethod
    def from_json(cls, d: Diagram, pairs, top_tail="min", bottom_tail="min"):
        pairs = sorted((int(n), int(e)) for n, e in pairs)
        lo, hi = pairs[0][0], pairs[-1][0]
        return cls(d, lo, hi, tuple(e for _, e in pairs), top_tail, bottom_tail)


def _extremal_fill(d: Diagram, lo: int, hi: int, top_vertex: int, which: str) -> tuple:
    """Fill levels [lo, hi] downward from a source vertex with extremal edges."""
    out = []
    v = top_vertex
    for n in range(hi, lo - 1, -1):
        g = d.graph_at(n)
        es = g.out_edges(v)
        if not es:
            raise ValueError(f"vertex {v} at level {n} has no outgoing edge")
        e = es[0] if which == "min" else es[-1]
        out.append(e)
        v = g.tgt(e)
    return tuple(reversed(out))


def minimal_path(d: Diagram, lo: int, hi: int, top_vertex: int = 0,
                 top_tail=None, bottom_tail="min") -> PathWindow:
    """The order-minimal path below ``top_vertex`` on levels [lo, hi]."""
    if top_tail is None:
        top_tail = ("vertex", top_vertex)
    return PathWindow(d, lo, hi, _extremal_fill(d, lo, hi, top_vertex, "min"),
                      top_tail, bottom_tail)


def maximal_path(d: Diagram, lo: int, hi: int, top_vertex: int = 0,
                 top_tail=None, bottom_tail="min") -> PathWindow:
    if top_tail is None:
        top_tail = ("vertex", top_vertex)
    return PathWindow(d, lo, hi, _extremal_fill(d, lo, hi, top_vertex, "max"),
                      top_tail, bottom_tail)


# -- comparison and the successor map ----------------------------------------


def compare(x: PathWindow, y: PathWindow) -> str:
    """Order two paths: less/equal/greater, or incomparable across leaves.

    Paths on different leaves (different tail conventions, or different
    source vertices at the top of the window, which is where an explicit
    top vertex lives) are incomparable.  Otherwise the highest level of
    disagreement decides by up-rank.
    """
    x._check_window(y)
    if x.edges == y.edges:
        return EQUAL if x.same_leaf(y) else INCOMPARABLE
    if not x.same_leaf(y):
        return INCOMPARABLE
    for n in range(x.hi, x.lo - 1, -1):
        ex, ey = x.edge_at(n), y.edge_at(n)
        if ex != ey:
            g = x.diagram.graph_at(n)
            return LESS if g.up_rank[ex] < g.up_rank[ey] else GREATER
    return EQUAL


def successor(x: PathWindow) -> PathWindow | None:
    """The order-minimal path strictly above x, or None when x is maximal.

    Standard odometer step: bump the lowest edge that is not up-rank
    maximal at its source, then reset every level below it to the
    minimal edge.
    """
    d = x.diagram
    for n in range(x.lo, x.hi + 1):
        g = d.graph_at(n)
        e = x.edge_at(n)
        siblings = g.out_edges(g.src(e))
        i = siblings.index(e)
        if i + 1 < len(siblings):
            e2 = siblings[i + 1]
            fill = _extremal_fill(d, x.lo, n - 1, g.tgt(e2), "min")
            new_edges = fill + (e2,) + x.edges[n - x.lo + 1:]
            return x.with_edges(new_edges)
    return None


def predecessor(x: PathWindow) -> PathWindow | None:
    """Inverse of :func:`successor`; None when x is minimal."""
    d = x.diagram
    for n in range(x.lo, x.hi + 1):
        g = d.graph_at(n)
        e = x.edge_at(n)
        siblings = g.out_edges(g.src(e))
        i = siblings.index(e)
        if i > 0:
            e2 = siblings[i - 1]
            fill = _extremal_fill(d, x.lo, n - 1, g.tgt(e2), "max")
            new_edges = fill + (e2,) + x.edges[n - x.lo + 1:]
            return x.with_edges(new_edges)
    return None


def orbit(x: PathWindow) -> Iterator[PathWindow]:
    """Iterate x, successor(x), ... until the maximal path (inclusive)."""
    cur = x
    while cur is not None:
        yield cur
        cur = successor(cur)


def reversed_successor(x: PathWindow, cyclic: bool = False) -> PathWindow | None:
    """Successor for the reversed order (down-ranks, compared from below).

    Scans from the top of the window for the first edge that is not
    down-rank maximal among the edges entering its target, bumps it, and
    resets all levels above to the down-rank minimal climb.  With
    ``cyclic=True`` the maximal path wraps to the minimal climb over its
    bottom vertex, making the map a bijection of the reversed leaf.
    """
    d = x.diagram
    for n in range(x.hi, x.lo - 1, -1):
        g = d.graph_at(n)
        e = x.edge_at(n)
        siblings = g.in_edges(g.tgt(e))
        i = siblings.index(e)
        if i + 1 < len(siblings):
            e2 = siblings[i + 1]
            climb = _climb_fill(d, n + 1, x.hi, g.src(e2), "min")
            new_edges = x.edges[:n - x.lo] + (e2,) + climb
            return PathWindow(d, x.lo, x.hi, new_edges,
                              _retag_top(x, new_edges), x.bottom_tail)
    if not cyclic:
        return None
    g = d.graph_at(x.lo)
    e0 = g.in_edges(g.tgt(x.edge_at(x.lo)))[0]
    climb = _climb_fill(d, x.lo + 1, x.hi, g.src(e0), "min")
    new_edges = (e0,) + climb
    return PathWindow(d, x.lo, x.hi, new_edges, _retag_top(x, new_edges), x.bottom_tail)


def _climb_fill(d: Diagram, lo: int, hi: int, bottom_vertex: int, which: str) -> tuple:
    """Fill levels [lo, hi] upward from a target vertex with extremal in-edges."""
    out = []
    v = bottom_vertex
    for n in range(lo, hi + 1):
        g = d.graph_at(n)
        es = g.in_edges(v)
        if not es:
            raise ValueError(f"vertex {v} below level {n} has no incoming edge")
        e = es[0] if which == "min" else es[-1]
        out.append(e)
        v = g.src(e)
    return tuple(out)


def _retag_top(x: PathWindow, new_edges) -> object:
    """Keep min/max top tails; re-anchor explicit vertices to the new top edge."""
    if isinstance(x.top_tail, tuple):
        g = x.diagram.graph_at(x.hi)
        return ("vertex", g.src(new_edges[-1]))
    return x.top_tail


# -- Markovian arcs ----------------------------------------------------------


@dataclass(frozen=True)
class MarkovArc:
    """The order interval freeing all levels below ``level``.

    Contains every path agreeing with the representative at levels >=
    ``level``; its plus measure depends only on ``vertex``, the vertex
    the arc hangs from (one level below the cut).
    """

    path: PathWindow
    level: int

    def __post_init__(self):
        if not self.path.lo <= self.level <= self.path.hi + 1:
            raise ValueError(f"arc level {self.level} outside "
                             f"[{self.path.lo}, {self.path.hi + 1}]")

    @property
    def vertex(self) -> int:
        return self.path.vertex_at(self.level - 1)

    def min_path(self) -> PathWindow:
        return self._refill("min")

    def max_path(self) -> PathWindow:
        return self._refill("max")

    def _refill(self, which):
        x = self.path
        if self.level == x.lo:
            return x
        fill = _extremal_fill(x.diagram, x.lo, self.level - 1, self.vertex, which)
        return x.with_edges(fill + x.edges[self.level - x.lo:])

    def mass(self, plus) -> float:
        """Plus measure of the arc (the canonical-vector entry at its vertex)."""
        return plus.arc_mass(self.level, self.vertex)

    def contains(self, y: PathWindow) -> bool:
        x = self.path
        return (x.diagram, x.lo, x.hi) == (y.diagram, y.lo, y.hi) and \
            x.same_leaf(y) and \
            all(y.edge_at(n) == x.edge_at(n) for n in range(self.level, x.hi + 1))

    def paths(self) -> Iterator[PathWindow]:
        """All paths of the arc in increasing order."""
        x = self.path
        d = x.diagram
        upper = x.edges[self.level - x.lo:]

        def fill(n, v, acc):
            if n < x.lo:
                yield x.with_edges(tuple(acc[::-1]) + upper)
                return
            g = d.graph_at(n)
            for e in g.out_edges(v):
                acc.append(e)
                yield from fill(n - 1, g.tgt(e), acc)
                acc.pop()

        yield from fill(self.level - 1, self.vertex, [])

    def size(self) -> int:
        """Number of paths in the arc on its window."""
        x = self.path
        P = np.eye(x.diagram.interface_size(self.level - 1), dtype=object)
        for n in range(self.level - 1, x.lo - 1, -1):
            P = P @ x.diagram.incidence_at(n)
        return int(sum(P[self.vertex, :]))


@dataclass(frozen=True)
class FlowArc:
    """Half-open order interval [start, end) along the vertical direction."""

    start: PathWindow
    end: PathWindow

    def __post_init__(self):
        rel = compare(self.start, self.end)
        if rel == INCOMPARABLE:
            raise ValueError("flow arc endpoints are incomparable")
        if rel == GREATER:
            raise ValueError("flow arc endpoints are out of order")

    @classmethod
    def from_duration(cls, start: PathWindow, t: float, plus) -> "FlowArc":
        adv = flow_advance(start, t, plus)
        return cls(start if adv.path.lo == start.lo else start.refined(adv.path.lo),
                   adv.path)

    def duration(self, plus) -> float:
        return sum(piece.mass(plus) for piece in arc_decompose(self))


def arc_decompose(arc: FlowArc) -> list:
    """Greedy decomposition of [start, end) into maximal Markovian arcs.

    Repeatedly peels the largest arc whose minimal element is the
    current point and whose maximal element stays below the right
    endpoint.  Pieces are disjoint, ordered, and reassemble exactly to
    the input interval.
    """
    start, end = arc.start, arc.end
    pieces = []
    cur = start
    while compare(cur, end) == LESS:
        n_cap = _minimal_prefix_top(cur)
        chosen = None
        for n in range(n_cap, cur.lo - 1, -1):
            cand = MarkovArc(cur, n)
            if compare(cand.max_path(), end) == LESS:
                chosen = cand
                break
        if chosen is None:
            raise AssertionError("greedy decomposition failed to make progress")
        pieces.append(chosen)
        nxt = successor(chosen.max_path())
        if nxt is None:
            break
        cur = nxt
    return pieces


def _minimal_prefix_top(x: PathWindow) -> int:
    """Largest level n such that all edges strictly below n are minimal."""
    d = x.diagram
    n = x.lo
    while n <= x.hi:
        g = d.graph_at(n)
        e = x.edge_at(n)
        if g.out_edges(g.src(e))[0] != e:
            break
        n += 1
    return n


def decomposition_csv_rows(pieces):
    """Aggregate a decomposition into (level, vertex, count) rows."""
    counts = {}
    for p in pieces:
        key = (p.level, p.vertex)
        counts[key] = counts.get(key, 0) + 1
    return [(lvl, v, c) for (lvl, v), c in sorted(counts.items())]


# -- the vertical flow -------------------------------------------------------


@dataclass(frozen=True)
class FlowAdvanceResult:
    """Outcome of advancing a point by plus-measure time.

    ``time_achieved`` is the exact mass of [start, path); the target
    time is matched up to ``quantization_error`` by refining the window
    ``refinement`` levels below its original bottom (atom boundaries
    quantize the flow at finite resolution).
    """

    path: PathWindow
    time_achieved: float
    quantization_error: float
    refinement: int


def flow_advance(x: PathWindow, t: float, plus, rel_tol: float = 1e-9,
                 max_refine: int = 400) -> FlowAdvanceResult:
    """Advance x by time t along the vertical flow.

    Consumes whole Markovian arcs greedily; when the remaining time is
    smaller than the current atom, the window is refined downward (the
    measure family is extended through the diagram's extension rule)
    until the leftover is below ``rel_tol * t``.  Raises
    :class:`WindowExhaustedError` if the orbit leaves the window first.
    """
    if t < 0:
        raise ValueError("flow time must be nonnegative")
    if t == 0:
        return FlowAdvanceResult(x, 0.0, 0.0, 0)
    cur = x
    elapsed = 0.0
    refinement = 0
    slack = 1e-12 * t
    while True:
        remaining = t - elapsed
        if remaining <= rel_tol * t:
            return FlowAdvanceResult(cur, elapsed, remaining, refinement)
        n_cap = _minimal_prefix_top(cur)
        consumed = False
        for n in range(n_cap, cur.lo - 1, -1):
            arc = MarkovArc(cur, n)
            mass = arc.mass(plus)
            if not mass > 0:
                raise RuntimeError(f"non-positive arc mass {mass!r} at level {n}; "
                                   "the measure family lost positivity")
            if mass <= remaining + slack:
                nxt = successor(arc.max_path())
                if nxt is None:
                    raise WindowExhaustedError(
                        f"flow reached the top of the window with "
                        f"{remaining - mass:.3e} time left")
                elapsed += mass
                cur = nxt
                consumed = True
                break
        if consumed:
            continue
        if refinement >= max_refine:
            return FlowAdvanceResult(cur, elapsed, remaining, refinement)
        step = 8
        new_lo = cur.lo - step
        refinement += step
        if hasattr(plus, "ensure_level"):
            plus.ensure_level(new_lo - 1)
        cur = cur.refined(new_lo)


def interval_mass(x: PathWindow, y: PathWindow, plus) -> float:
    """Plus measure of the half-open order interval [x, y)."""
    return FlowArc(x, y).duration(plus)


# -- loop-optimized orbit iteration ------------------------------------------


class OrbitWalker:
    """Mutable odometer over a fixed window, equivalent to :func:`successor`.

    Precomputes per-level rank tables so one step costs amortized O(1);
    used for long empirical-measure orbits.  ``edges`` exposes the
    current path as a plain list (edge id per level, bottom first).
    """

    def __init__(self, x: PathWindow):
        self.diagram = x.diagram
        self.lo, self.hi = x.lo, x.hi
        self.top_tail, self.bottom_tail = x.top_tail, x.bottom_tail
        self.edges = list(x.edges)
        self._next = []   # per level: edge -> next edge at same source, or -1
        self._minfrom = []  # per level: vertex -> minimal out-edge
        self._tgt = []
        for n in range(self.lo, self.hi + 1):
            g = self.diagram.graph_at(n)
            nxt = [-1] * g.n_edges
            minfrom = [-1] * g.m_top
            for v in range(g.m_top):
                es = g.out_edges(v)
                if es:
                    minfrom[v] = es[0]
                for a, b in zip(es, es[1:]):
                    nxt[a] = b
            self._next.append(nxt)
            self._minfrom.append(minfrom)
            self._tgt.append([g.tgt(e) for e in range(g.n_edges)])

    def step(self) -> bool:
        """Advance to the successor; False when the current path is maximal."""
        edges = self.edges
        for i in range(len(edges)):
            e2 = self._next[i][edges[i]]
            if e2 >= 0:
                edges[i] = e2
                v = self._tgt[i][e2]
                for j in range(i - 1, -1, -1):
                    e = self._minfrom[j][v]
                    edges[j] = e
                    v = self._tgt[j][e]
                return True
        return False

    def path(self) -> PathWindow:
        return PathWindow(self.diagram, self.lo, self.hi, tuple(self.edges),
                          self.top_tail, self.bottom_tail)
