r"""Level graphs, incidence matrices, and windows of graded diagrams.

Geometry and indexing conventions used throughout the package:

    level n     o o o    <- "level-n vertices" (top of graph n)
               /|\ ...       edges of graph n point downward
    level n-1  o o o     <- bottom of graph n = top of graph n-1

The graph at level n is bipartite; its incidence matrix A_n has entry
``A_n[i, j] = number of edges from top vertex i to bottom vertex j``.
A path assigns to every level n an edge ``x_n`` of graph n such that the
bottom vertex of ``x_{n+1}`` equals the top vertex of ``x_n`` (the
terminal vertex of each edge meets the initial vertex of the edge one
level down).  Vertex sets between consecutive graphs are shared, so
composability reads ``m_bot(graph n+1) == m_top(graph n)``.

Edges are ordered twice: ``up_rank`` orders the edges leaving each top
vertex (this induces the adic partial order on paths), ``down_rank``
orders the edges entering each bottom vertex (this induces the reversed
order used for horizontal difference quotients).

All vertex and edge indices are 0-based internally; the JSON spec-file
format is 1-based for vertices.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np


class WindowError(ValueError):
    """A requested level range falls outside the diagram window."""


def _canonical_up_ranks(edges):
    """Default up_rank: per source, sorted by (target, insertion order)."""
    order = sorted(range(len(edges)), key=lambda e: (edges[e][0], edges[e][1], e))
    ranks = [0] * len(edges)
    seen = {}
    for e in order:
        s = edges[e][0]
        ranks[e] = seen.get(s, 0)
        seen[s] = ranks[e] + 1
    return tuple(ranks)


def _canonical_down_ranks(edges):
    """Default down_rank: per target, sorted by (source, insertion order)."""
    order = sorted(range(len(edges)), key=lambda e: (edges[e][1], edges[e][0], e))
    ranks = [0] * len(edges)
    seen = {}
    for e in order:
        t = edges[e][1]
        ranks[e] = seen.get(t, 0)
        seen[t] = ranks[e] + 1
    return tuple(ranks)


@dataclass(frozen=True)
class LevelGraph:
    """One bipartite level of a graded graph.

    ``edges[e] = (src, tgt)`` with ``src`` a top vertex and ``tgt`` a
    bottom vertex.  Multiple parallel edges are allowed.  Rank arrays
    default to the canonical (lexicographic) labeling; pass explicit
    tuples to override per edge.
    """

    m_top: int
    m_bot: int
    edges: tuple
    up_rank: tuple = None
    down_rank: tuple = None

    def __post_init__(self):
        object.__setattr__(self, "edges", tuple((int(s), int(t)) for s, t in self.edges))
        if self.up_rank is None:
            object.__setattr__(self, "up_rank", _canonical_up_ranks(self.edges))
        else:
            object.__setattr__(self, "up_rank", tuple(int(r) for r in self.up_rank))
        if self.down_rank is None:
            object.__setattr__(self, "down_rank", _canonical_down_ranks(self.edges))
        else:
            object.__setattr__(self, "down_rank", tuple(int(r) for r in self.down_rank))

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def src(self, e: int) -> int:
        return self.edges[e][0]

    def tgt(self, e: int) -> int:
        return self.edges[e][1]

    def out_edges(self, v: int):
        """Edge ids leaving top vertex v, in increasing up_rank."""
        es = [e for e in range(self.n_edges) if self.edges[e][0] == v]
        es.sort(key=lambda e: self.up_rank[e])
        return es

    def in_edges(self, v: int):
        """Edge ids entering bottom vertex v, in increasing down_rank."""
        es = [e for e in range(self.n_edges) if self.edges[e][1] == v]
        es.sort(key=lambda e: self.down_rank[e])
        return es

    def incidence(self) -> np.ndarray:
        """m_top x m_bot matrix counting edges i -> j (dtype object, exact)."""
        A = np.zeros((self.m_top, self.m_bot), dtype=object)
        for s, t in self.edges:
            if 0 <= s < self.m_top and 0 <= t < self.m_bot:
                A[s, t] += 1
        return A


def validate_graph(g: LevelGraph):
    """Return a list of invariant violations (empty when g is valid).

    Validation never raises; each message names the offending vertex or
    edge and the broken rule.
    """
    issues = []
    for e, (s, t) in enumerate(g.edges):
        if not 0 <= s < g.m_top:
            issues.append(f"edge {e}: source {s} outside top vertex range 0..{g.m_top - 1}")
        if not 0 <= t < g.m_bot:
            issues.append(f"edge {e}: target {t} outside bottom vertex range 0..{g.m_bot - 1}")
    touched_top = {s for s, _ in g.edges}
    touched_bot = {t for _, t in g.edges}
    for v in range(g.m_top):
        if v not in touched_top:
            issues.append(f"top vertex {v} isolated (no incident edge)")
    for v in range(g.m_bot):
        if v not in touched_bot:
            issues.append(f"bottom vertex {v} isolated (no incident edge)")
    if len(g.up_rank) != g.n_edges:
        issues.append("up_rank length does not match edge count")
    if len(g.down_rank) != g.n_edges:
        issues.append("down_rank length does not match edge count")
    # rank sets must be exactly {0..deg-1} at each vertex
    if len(g.up_rank) == g.n_edges:
        for v in range(g.m_top):
            ranks = sorted(g.up_rank[e] for e in range(g.n_edges) if g.edges[e][0] == v)
            if ranks and ranks != list(range(len(ranks))):
                issues.append(f"top vertex {v}: up_rank values {ranks} are not 0..{len(ranks) - 1}")
    if len(g.down_rank) == g.n_edges:
        for v in range(g.m_bot):
            ranks = sorted(g.down_rank[e] for e in range(g.n_edges) if g.edges[e][1] == v)
            if ranks and ranks != list(range(len(ranks))):
                issues.append(f"bottom vertex {v}: down_rank values {ranks} are not 0..{len(ranks) - 1}")
    return issues


def incidence(g: LevelGraph) -> np.ndarray:
    """Incidence matrix of a level graph; entry (i, j) counts edges i -> j."""
    return g.incidence()


def graph_from_incidence(A) -> LevelGraph:
    """Build the canonically ranked level graph realizing matrix A.

    Inverse of :func:`incidence` on canonically labeled graphs: edges are
    emitted sorted by (source, target), ranks are the D2 defaults.
    """
    A = np.asarray(A, dtype=object)
    m_top, m_bot = A.shape
    edges = []
    for i in range(m_top):
        for j in range(m_bot):
            edges.extend([(i, j)] * int(A[i, j]))
    return LevelGraph(m_top, m_bot, tuple(edges))


def fibonacci_graph() -> LevelGraph:
    """Two vertices a=0, b=1 with edges a->a, a->b, b->a; incidence [[1,1],[1,0]]."""
    return LevelGraph(2, 2, ((0, 0), (0, 1), (1, 0)))


def identity_graph(m: int) -> LevelGraph:
    """m parallel strands i -> i (identity incidence matrix)."""
    return LevelGraph(m, m, tuple((i, i) for i in range(m)))


def _exact_det(A) -> Fraction:
    """Determinant over the rationals by fraction-free Gaussian elimination."""
    M = [[Fraction(int(x)) for x in row] for row in np.asarray(A, dtype=object)]
    n = len(M)
    det = Fraction(1)
    for c in range(n):
        piv = next((r for r in range(c, n) if M[r][c] != 0), None)
        if piv is None:
            return Fraction(0)
        if piv != c:
            M[c], M[piv] = M[piv], M[c]
            det = -det
        det *= M[c][c]
        for r in range(c + 1, n):
            f = M[r][c] / M[c][c]
            for k in range(c, n):
                M[r][k] -= f * M[c][k]
    return det


class DiagramEnsemble:
    """A finite alphabet of level graphs with i.i.d. sampling weights.

    All alphabet matrices must be square and invertible over the
    rationals (non-invertible letters are rejected), at least one letter
    with positive weight must have a strictly positive incidence matrix,
    and the weights must sum to 1 within 1e-12.
    """

    def __init__(self, alphabet: Sequence[LevelGraph], probabilities: Sequence[float],
                 positivity_witness: int | None = None):
        alphabet = tuple(alphabet)
        probs = tuple(float(p) for p in probabilities)
        if len(alphabet) != len(probs):
            raise ValueError("alphabet and probabilities must have the same length")
        if any(p < 0 for p in probs):
            raise ValueError("probabilities must be nonnegative")
        if abs(sum(probs) - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {sum(probs)!r}, not 1 within 1e-12")
        for k, g in enumerate(alphabet):
            bad = validate_graph(g)
            if bad:
                raise ValueError(f"alphabet letter {k} invalid: {bad[0]}")
            if g.m_top != g.m_bot:
                raise ValueError(f"alphabet letter {k} is not square (m_top != m_bot)")
            if _exact_det(g.incidence()) == 0:
                raise ValueError(f"alphabet letter {k} has singular incidence matrix")
        if positivity_witness is None:
            positivity_witness = next(
                (k for k, g in enumerate(alphabet)
                 if probs[k] > 0 and np.all(np.asarray(g.incidence(), dtype=object) >= 1)),
                None)
            if positivity_witness is None:
                raise ValueError("no alphabet letter with positive weight has a strictly "
                                 "positive incidence matrix")
        else:
            w = alphabet[positivity_witness].incidence()
            if not np.all(np.asarray(w, dtype=object) >= 1):
                raise ValueError(f"witness letter {positivity_witness} is not strictly positive")
            if probs[positivity_witness] <= 0:
                raise ValueError(f"witness letter {positivity_witness} has zero weight")
        self.alphabet = alphabet
        self.probabilities = probs
        self.positivity_witness = int(positivity_witness)

    def letter_at(self, seed: int, n: int) -> int:
        """Deterministic i.i.d. letter index at level n for the given seed.

        A pure function of (seed, n): overlapping windows sampled from the
        same seed agree on their overlap.
        """
        zz = 2 * n if n >= 0 else -2 * n - 1  # zig-zag: levels may be negative
        u = np.random.default_rng((int(seed), zz)).random()
        acc = 0.0
        for k, p in enumerate(self.probabilities):
            acc += p
            if u < acc:
                return k
        return len(self.probabilities) - 1


@dataclass(frozen=True)
class Diagram:
    """A window [n_lo, n_hi] of level graphs plus an extension rule.

    ``graph_at(n)`` is defined for every integer n: inside the window it
    returns the stored graph, outside it follows the extension rule
    (stationary, periodic, or seeded i.i.d.).  Orbit operations treat the
    declared window as a hard boundary on the top side; measure and flow
    refinements may materialize graphs below it.
    """

    n_lo: int
    n_hi: int
    graphs: tuple
    extension: tuple  # ("stationary",) | ("periodic", word, anchor) | ("iid", ensemble, seed)

    def __post_init__(self):
        if self.n_hi < self.n_lo:
            raise ValueError("empty window")
        if len(self.graphs) != self.n_hi - self.n_lo + 1:
            raise ValueError("graph count does not match window length")
        # composability within the window and one step into the extension
        for n in range(self.n_lo - 1, self.n_hi + 1):
            below, above = self.graph_at(n), self.graph_at(n + 1)
            if above.m_bot != below.m_top:
                raise ValueError(f"graphs at levels {n + 1} and {n} are not composable: "
                                 f"m_bot={above.m_bot} != m_top={below.m_top}")

    # -- construction ------------------------------------------------------

    @classmethod
    def stationary(cls, g: LevelGraph, window=(1, 40)) -> "Diagram":
        lo, hi = int(window[0]), int(window[1])
        return cls(lo, hi, tuple([g] * (hi - lo + 1)), ("stationary",))

    @classmethod
    def periodic(cls, word: Sequence[LevelGraph], window=(1, 40)) -> "Diagram":
        word = tuple(word)
        lo, hi = int(window[0]), int(window[1])
        graphs = tuple(word[(n - lo) % len(word)] for n in range(lo, hi + 1))
        return cls(lo, hi, graphs, ("periodic", word, lo))

    @classmethod
    def iid(cls, ensemble: DiagramEnsemble, seed: int, window=(1, 40)) -> "Diagram":
        lo, hi = int(window[0]), int(window[1])
        graphs = tuple(ensemble.alphabet[ensemble.letter_at(seed, n)] for n in range(lo, hi + 1))
        return cls(lo, hi, graphs, ("iid", ensemble, int(seed)))

    # -- access ------------------------------------------------------------

    def graph_at(self, n: int) -> LevelGraph:
        if self.n_lo <= n <= self.n_hi:
            return self.graphs[n - self.n_lo]
        kind = self.extension[0]
        if kind == "stationary":
            return self.graphs[0]
        if kind == "periodic":
            word, anchor = self.extension[1], self.extension[2]
            return word[(n - anchor) % len(word)]
        if kind == "iid":
            ensemble, seed = self.extension[1], self.extension[2]
            return ensemble.alphabet[ensemble.letter_at(seed, n)]
        raise ValueError(f"unknown extension kind {kind!r}")

    def incidence_at(self, n: int) -> np.ndarray:
        return self.graph_at(n).incidence()

    def interface_size(self, n: int) -> int:
        """Number of level-n vertices (top of graph n, bottom of graph n+1)."""
        return self.graph_at(n).m_top

    def require_window(self, lo: int, hi: int):
        if lo < self.n_lo or hi > self.n_hi:
            raise WindowError(f"levels [{lo}, {hi}] outside diagram window "
                              f"[{self.n_lo}, {self.n_hi}]")

    def with_window(self, lo: int, hi: int) -> "Diagram":
        """Rematerialize this diagram on another window via its extension rule."""
        graphs = tuple(self.graph_at(n) for n in range(lo, hi + 1))
        return Diagram(lo, hi, graphs, self.extension)


def sample_diagram(ensemble: DiagramEnsemble, seed: int, window=(1, 40)) -> Diagram:
    """Draw a diagram window i.i.d. from the ensemble, reproducibly in (seed, level)."""
    return Diagram.iid(ensemble, seed, window)


# -- cylinders ---------------------------------------------------------------


@dataclass(frozen=True)
class Cylinder:
    """Paths with edges fixed at levels base+1 .. base+k.

    ``edges[i]`` is the edge id at level ``base + 1 + i``.  A depth-0
    cylinder pins only the vertex at level ``base`` (field ``vertex``).
    """

    base: int
    edges: tuple
    vertex: int = None

    def __post_init__(self):
        object.__setattr__(self, "edges", tuple(int(e) for e in self.edges))
        if not self.edges and self.vertex is None:
            raise ValueError("depth-0 cylinder needs a vertex")

    @property
    def depth(self) -> int:
        return len(self.edges)

    def bottom_vertex(self, d: Diagram) -> int:
        """Vertex pinned at level ``base`` (target of the lowest fixed edge)."""
        if not self.edges:
            return self.vertex
        return d.graph_at(self.base + 1).tgt(self.edges[0])

    def top_vertex(self, d: Diagram) -> int:
        """Vertex pinned at level ``base + depth`` (source of the highest fixed edge)."""
        if not self.edges:
            return self.vertex
        return d.graph_at(self.base + self.depth).src(self.edges[-1])


def cylinders(d: Diagram, n: int, k: int):
    """Enumerate all cylinders of depth k based at level n.

    Words are edge-compatible chains (the bottom vertex of each edge is
    the top vertex of the edge below); enumeration is depth-first in
    increasing edge id, so the order is stable and lexicographic.
    Depth 0 enumerates the level-n vertex set.
    """
    if k < 0:
        raise ValueError("depth must be nonnegative")
    if k == 0:
        if not (d.n_lo - 1 <= n <= d.n_hi):
            raise WindowError(f"level {n} outside diagram window")
        return [Cylinder(n, (), v) for v in range(d.interface_size(n))]
    d.require_window(n + 1, n + k)
    out = []

    def grow(word, level):
        if level > n + k:
            out.append(Cylinder(n, tuple(word)))
            return
        g = d.graph_at(level)
        # chain condition: the new edge's bottom vertex is the previous edge's top
        need = d.graph_at(level - 1).src(word[-1]) if word else None
        for e in range(g.n_edges):
            if word and g.tgt(e) != need:
                continue
            word.append(e)
            grow(word, level + 1)
            word.pop()

    grow([], n + 1)
    return out


# -- JSON spec files ---------------------------------------------------------


def graph_to_json(g: LevelGraph) -> dict:
    return {
        "m_top": g.m_top,
        "m_bot": g.m_bot,
        "edges": [[s + 1, t + 1, g.up_rank[e], g.down_rank[e]]
                  for e, (s, t) in enumerate(g.edges)],
    }


def graph_from_json(obj: dict) -> LevelGraph:
    edges, up, down = [], [], []
    for row in obj["edges"]:
        s, t, ur, dr = row
        edges.append((int(s) - 1, int(t) - 1))
        up.append(int(ur))
        down.append(int(dr))
    return LevelGraph(int(obj["m_top"]), int(obj["m_bot"]), tuple(edges),
                      tuple(up), tuple(down))


def diagram_to_json(d: Diagram) -> dict:
    kind = d.extension[0]
    ext = {"kind": {"stationary": "stationary", "periodic": "periodic", "iid": "iid"}[kind]}
    if kind == "periodic":
        ext["word"] = [graph_to_json(g) for g in d.extension[1]]
    elif kind == "iid":
        ens = d.extension[1]
        ext["probs"] = list(ens.probabilities)
        ext["seed"] = d.extension[2]
    obj = {"window": [d.n_lo, d.n_hi], "extension": ext}
    if kind == "iid":
        obj["alphabet"] = [graph_to_json(g) for g in d.extension[1].alphabet]
    else:
        obj["alphabet"] = [graph_to_json(g) for g in dict.fromkeys(d.graphs)]
    return obj


def diagram_from_json(obj: dict) -> Diagram:
    """Parse the diagram spec-file format (1-based vertex indices)."""
    for key in ("alphabet", "extension", "window"):
        if key not in obj:
            raise ValueError(f"diagram spec missing key {key!r}")
    alphabet = [graph_from_json(g) for g in obj["alphabet"]]
    lo, hi = (int(x) for x in obj["window"])
    ext = obj["extension"]
    kind = ext.get("kind")
    if kind == "stationary":
        return Diagram.stationary(alphabet[0], (lo, hi))
    if kind == "periodic":
        word = [graph_from_json(g) for g in ext["word"]] if "word" in ext else alphabet
        return Diagram.periodic(word, (lo, hi))
    if kind == "iid":
        if "probs" not in ext:
            raise ValueError("diagram spec missing key 'probs' for iid extension")
        if "seed" not in ext:
            raise ValueError("diagram spec missing key 'seed' for iid extension")
        ens = DiagramEnsemble(alphabet, ext["probs"])
        return Diagram.iid(ens, int(ext["seed"]), (lo, hi))
    raise ValueError(f"diagram spec has unknown extension kind {kind!r}")


def load_diagram(path) -> Diagram:
    with open(path) as fh:
        return diagram_from_json(json.load(fh))
