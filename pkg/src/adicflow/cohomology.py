"""Cylinder test functions and the obstruction theory of the vertical flow.

A test function is constant on depth-k cylinders anchored at level 0 (it
reads the edges at levels 1..k).  Its integrals over canonical arcs form
a vector family whose transport defect vanishes identically once the
arcs outrun the depth, so the drifted-recurrence solver lifts every test
function to a finitely-additive measure.  Pairing that measure against
the dual basis gives the obstruction coefficients: all zero (below
tolerance) exactly when integrals of the function along the vertical
flow stay bounded, which is also what the Birkhoff traces and transfer
samples measure directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cocycle import OseledetsSplit, fit_decay_rate, solve_drifted_recurrence
from .diagram import Cylinder, Diagram, cylinders
from .measures import (
    DualSystem,
    FinAddMeasure,
    InvariantMeasure,
    finadd_from_vector,
    pairing,
)
from .ordering import (
    FlowArc,
    MarkovArc,
    PathWindow,
    WindowExhaustedError,
    _minimal_prefix_top,
    arc_decompose,
    reversed_successor,
    successor,
)


class UnresolvableDepthError(ValueError):
    """An arc's window does not cover the levels a function reads."""


@dataclass(frozen=True)
class CylinderFunction:
    """A function constant on depth-k cylinders anchored at level 0.

    ``values[i]`` is the value on the i-th cylinder in the enumeration
    order of :func:`adicflow.diagram.cylinders`; depth 0 means one value
    per level-0 vertex.  ``companion`` optionally carries the horizontal
    derivative as another cylinder function.
    """

    diagram: Diagram
    depth: int
    values: np.ndarray
    companion: "CylinderFunction | None" = None
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        expected = len(self.words())
        if len(self.values) != expected:
            raise ValueError(f"need {expected} values for depth {self.depth}, "
                             f"got {len(self.values)}")

    # -- construction --------------------------------------------------------

    @classmethod
    def constant(cls, d: Diagram, c: float) -> "CylinderFunction":
        return cls(d, 0, np.full(d.interface_size(0), float(c)))

    @classmethod
    def from_values(cls, d: Diagram, depth: int, values) -> "CylinderFunction":
        return cls(d, depth, values)

    @classmethod
    def indicator(cls, d: Diagram, word) -> "CylinderFunction":
        """Indicator of one depth-k cylinder (word of edge ids at levels 1..k)."""
        word = tuple(int(e) for e in word)
        f = cls(d, len(word), np.zeros(len(cylinders(d, 0, len(word)))))
        f.values[f.word_index()[word]] = 1.0
        return f

    def words(self):
        if "words" not in self._cache:
            if self.depth == 0:
                self._cache["words"] = [v for v in range(self.diagram.interface_size(0))]
            else:
                self._cache["words"] = [c.edges for c in cylinders(self.diagram, 0, self.depth)]
        return self._cache["words"]

    def word_index(self):
        if "index" not in self._cache:
            self._cache["index"] = {w: i for i, w in enumerate(self.words())}
        return self._cache["index"]

    # -- evaluation ----------------------------------------------------------

    def value_on_word(self, word) -> float:
        """Value on a depth-k word (a level-0 vertex id when depth is 0)."""
        if self.depth == 0:
            return float(self.values[int(word)])
        return float(self.values[self.word_index()[tuple(word)]])

    def value_on_path(self, x: PathWindow) -> float:
        if self.depth == 0:
            return float(self.values[x.vertex_at(0)])
        if x.lo > 1 or x.hi < self.depth:
            raise UnresolvableDepthError(
                f"path window [{x.lo}, {x.hi}] does not cover levels 1..{self.depth}")
        word = tuple(x.edge_at(n) for n in range(1, self.depth + 1))
        return self.value_on_word(word)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values))) if len(self.values) else 0.0

    # -- algebra ---------------------------------------------------------------

    def _binary(self, other, op):
        if isinstance(other, CylinderFunction):
            depth = max(self.depth, other.depth)
            return CylinderFunction(self.diagram, depth,
                                    op(self.deepened(depth).values,
                                       other.deepened(depth).values))
        return CylinderFunction(self.diagram, self.depth, op(self.values, float(other)))

    def __add__(self, other):
        return self._binary(other, lambda a, b: a + b)

    def __sub__(self, other):
        return self._binary(other, lambda a, b: a - b)

    def __mul__(self, c):
        return CylinderFunction(self.diagram, self.depth, self.values * float(c))

    __rmul__ = __mul__

    def deepened(self, depth: int) -> "CylinderFunction":
        """The same function represented on finer cylinders."""
        if depth < self.depth:
            raise ValueError("can only deepen")
        if depth == self.depth:
            return self
        d = self.diagram
        vals = []
        for c in cylinders(d, 0, depth):
            if self.depth == 0:
                vals.append(self.value_on_word(c.bottom_vertex(d)))
            else:
                vals.append(self.value_on_word(c.edges[:self.depth]))
        return CylinderFunction(d, depth, np.array(vals))

    def subtract_mean(self, inv: InvariantMeasure) -> "CylinderFunction":
        return self - nu_integral(self, inv)


def nu_integral(f: CylinderFunction, inv: InvariantMeasure) -> float:
    """Integral of a cylinder function against the invariant measure."""
    d = f.diagram
    if f.depth == 0:
        return float(np.dot(f.values, inv.plus.vector(0) * inv.minus.vector(0)))
    total = 0.0
    for c in cylinders(d, 0, f.depth):
        total += f.value_on_word(c.edges) * inv.nu(c)
    return float(total)


# -- integrals over arcs -------------------------------------------------------


class _IntegralTable:
    """Canonical-arc integrals of one function against one plus family.

    ``vector(n)`` is exact above the function depth: it is the exact
    integer cocycle product applied to the base integral vector, so the
    transport identity holds with integer-matrix exactness and the
    reported defects above the depth are true zeros.
    """

    def __init__(self, f: CylinderFunction, plus):
        self.f = f
        self.plus = plus
        self.d = f.diagram
        self.base_level = f.depth + 1
        self._base = self._base_vector()
        self._prods = {self.base_level: np.eye(len(self._base), dtype=object)}
        self._vecs = {}
        self._small = {}

    def _base_vector(self) -> np.ndarray:
        d, f = self.d, self.f
        k = f.depth
        p0 = np.asarray(self.plus.vector(0), dtype=float)
        m = d.interface_size(k)
        base = np.zeros(m)
        if k == 0:
            return f.values * p0
        for c in cylinders(d, 0, k):
            base[c.top_vertex(d)] += f.value_on_word(c.edges) * p0[c.bottom_vertex(d)]
        return base

    def _product(self, n: int) -> np.ndarray:
        top = max(self._prods)
        while top < n:
            A = self.d.incidence_at(top).astype(object)
            self._prods[top + 1] = A @ self._prods[top]
            top += 1
        return self._prods[n]

    def vector(self, n: int) -> np.ndarray:
        """Canonical integrals at level n (arcs hang from level n-1 vertices)."""
        if n < self.base_level:
            raise ValueError("below the exact range")
        if n not in self._vecs:
            self._vecs[n] = np.asarray(self._product(n) @ self._base, dtype=float)
        return self._vecs[n]

    def exact_defect(self, n: int) -> float:
        """|A_n w_n - w_{n+1}| evaluated through the exact integer products."""
        A = self.d.incidence_at(n).astype(object)
        D = A @ self._product(n) - self._product(n + 1)
        return float(np.linalg.norm(np.asarray(D @ self._base, dtype=float)))

    def small_arc(self, level: int, upper_word: tuple, vertex: int) -> float:
        """Integral over an arc at or below the function depth.

        ``upper_word`` pins the edges at levels [level, depth] from the
        arc's representative; the free fill below runs through level 1,
        after which masses aggregate into the plus vector at level 0.
        """
        key = (level, upper_word, vertex)
        if key in self._small:
            return self._small[key]
        d, f = self.d, self.f
        k = f.depth
        if level <= 0:
            # everything f reads is pinned by the upper word
            if k == 0:
                v0 = d.graph_at(0).src(upper_word[0 - level])
                val = float(f.values[v0])
            else:
                val = f.value_on_word(upper_word[1 - level:1 - level + k])
            self._small[key] = val * float(self.plus.vector(level - 1)[vertex])
            return self._small[key]
        p0 = self.plus.vector(0)
        total = 0.0

        def downfill(n, v, acc):
            nonlocal total
            if n == 0:
                word = tuple(reversed(acc)) + upper_word
                mass = p0[d.graph_at(1).tgt(acc[-1])] if acc else p0[v]
                total += f.value_on_word(word[:k]) * mass
                return
            g = d.graph_at(n)
            for e in range(g.n_edges):
                if g.src(e) == v:
                    acc.append(e)
                    downfill(n - 1, g.tgt(e), acc)
                    acc.pop()

        downfill(level - 1, vertex, [])
        self._small[key] = float(total)
        return self._small[key]


def _table(f: CylinderFunction, plus) -> _IntegralTable:
    key = ("table", id(plus))
    if key not in f._cache:
        f._cache[key] = _IntegralTable(f, plus)
    return f._cache[key]


def arc_integral(f: CylinderFunction, arc, plus) -> float:
    """Integral of f against the plus measure over a Markovian or flow arc.

    The integral lives on the ideal path space: mass below level 1
    aggregates into the plus vector there, so the arc's own window only
    needs to pin the edges the function can see.
    """
    if isinstance(arc, FlowArc):
        return sum(arc_integral(f, piece, plus) for piece in arc_decompose(arc))
    x = arc.path
    k = f.depth
    n = arc.level
    table = _table(f, plus)
    if n >= k + 1:
        return float(table.vector(n)[arc.vertex])
    if x.lo > n or x.hi < k:
        raise UnresolvableDepthError(
            f"arc at level {n} on window [{x.lo}, {x.hi}] does not pin "
            f"levels {n}..{k} read by a depth-{k} function")
    upper = tuple(x.edge_at(t) for t in range(n, k + 1))
    return table.small_arc(n, upper, arc.vertex)


# -- canonical vectors ---------------------------------------------------------


@dataclass(frozen=True)
class CanonicalVectors:
    """Integrals of a function over the canonical arcs, with defects.

    ``w[n]`` collects the arc integrals at level n (one entry per
    level-(n-1) vertex); ``defects[n] = |A_n w_n - w_{n+1}|``.  Above the
    function depth the transport identity is integer-exact and the
    defects are true zeros, which the fitted decay rate reports as inf.
    """

    w: dict
    defects: dict
    fitted_rate: float
    depth: int

    def defect_array(self):
        ns = sorted(self.defects)
        return np.array(ns), np.array([self.defects[n] for n in ns])


def canonical_rep(d: Diagram, level: int, vertex: int, hi: int) -> PathWindow:
    """The canonical representative: minimal climb from a vertex at a level."""
    from .ordering import _climb_fill
    edges = _climb_fill(d, level, hi, vertex, "min")
    return PathWindow(d, level, hi, edges, "min")


def canonical_vectors(f: CylinderFunction, levels, plus) -> CanonicalVectors:
    """Arc integrals of f over canonical arcs at the given levels.

    Small levels (at or below the depth) integrate the representative
    explicitly; higher levels transport the base vector by exact integer
    products.
    """
    d = f.diagram
    k = f.depth
    levels = sorted(levels)
    table = _table(f, plus)
    w = {}
    for n in levels:
        m = d.interface_size(n - 1)
        if n >= k + 1:
            w[n] = table.vector(n)
        else:
            hi_needed = max(k, n)
            vec = np.zeros(m)
            for v in range(m):
                rep = canonical_rep(d, n, v, hi_needed)
                vec[v] = arc_integral(f, MarkovArc(rep, n), plus)
            w[n] = vec
    defects = {}
    for n in levels:
        if n + 1 not in w:
            continue
        if n >= k + 1:
            defects[n] = table.exact_defect(n)
        else:
            A = d.incidence_at(n).astype(float)
            defects[n] = float(np.linalg.norm(A @ w[n] - w[n + 1]))
    scale = max(float(np.max(np.abs(w[n]))) for n in w) or 1.0
    ns = sorted(defects)
    rate, _ = fit_decay_rate([defects[n] for n in ns], ns=ns, floor_scale=scale)
    return CanonicalVectors(w, defects, rate, k)


# -- weak Lipschitz constant ---------------------------------------------------


def weak_lipschitz_constant(f: CylinderFunction, plus, levels=None) -> float:
    """Largest gap between integrals over vertex-matched arcs.

    Two arcs at the same level hanging from the same vertex differ only
    through the fixed edges they carry between the level and the
    function depth; the constant is the exact maximum over those choices
    (arcs above the depth contribute nothing).
    """
    d = f.diagram
    k = f.depth
    if levels is None:
        levels = range(max(d.n_lo + 1, k - 10), k + 1)
    table = _table(f, plus)
    worst = 0.0
    for n in levels:
        if n > k:
            continue  # vertex-matched arcs above the depth have equal integrals
        for v in range(d.interface_size(n - 1)):
            vals = [table.small_arc(n, chain, v)
                    for chain in _upper_chains(d, n, k, v)]
            if len(vals) > 1:
                worst = max(worst, max(vals) - min(vals))
    return worst


def _upper_chains(d: Diagram, lo: int, hi: int, bottom_vertex: int):
    """All edge chains at levels [lo, hi] climbing from a vertex."""
    out = []

    def climb(n, v, acc):
        if n > hi:
            out.append(tuple(acc))
            return
        g = d.graph_at(n)
        for e in range(g.n_edges):
            if g.tgt(e) == v:
                acc.append(e)
                climb(n + 1, g.src(e), acc)
                acc.pop()

    climb(lo, bottom_vertex, [])
    return out


# -- the lifted measure and obstructions ---------------------------------------


@dataclass(frozen=True)
class PhiFResult:
    """A test function lifted to a finitely-additive measure.

    ``bound`` is the maximum distance between the canonical integral
    vectors and the transported family over the solver window.
    """

    measure: FinAddMeasure
    bound: float
    solution: object
    canonical: CanonicalVectors


def build_phi_f(f: CylinderFunction, split: OseledetsSplit, plus,
                n_levels: int | None = None) -> PhiFResult:
    """Lift f to the unique measure shadowing its canonical integrals."""
    if split.level != 0:
        raise ValueError("the lift is anchored at level 0")
    d = f.diagram
    if n_levels is None:
        n_levels = min(40, d.n_hi)
    canon = canonical_vectors(f, range(1, n_levels + 1), plus)
    theta = canon.fitted_rate
    if not math.isfinite(theta):
        gap = float(split.exponents[0] - split.exponents[-1]) if len(split.exponents) > 1 else 1.0
        theta = max(gap, 0.5)
    w_seq = [canon.w[n] for n in range(1, n_levels + 1)]
    # stationary diagrams share one splitting across levels
    splits = [split] * (n_levels + 1) if d.extension[0] == "stationary" else None
    sol = solve_drifted_recurrence(d, w_seq, theta=theta, base=0, splits=splits)
    fam = finadd_from_vector(d, split, sol.w_hat, "+", label="phi_f")
    bound = 0.0
    for n in range(1, n_levels + 1):
        bound = max(bound, float(np.max(np.abs(canon.w[n] - fam.vector(n - 1)))))
    return PhiFResult(fam, bound, sol, canon)


@dataclass(frozen=True)
class ObstructionReport:
    """Obstruction coefficients of a test function against the dual basis."""

    coefficients: np.ndarray
    mean_term: float
    verdict: str              # "zero" | "nonzero"
    first_nonzero: int | None  # 1-based index into the dual basis
    tolerance: float

    def to_json(self) -> dict:
        return {"coefficients": self.coefficients.tolist(),
                "mean_term": self.mean_term,
                "verdict": self.verdict,
                "first_nonzero": self.first_nonzero,
                "tolerance": self.tolerance}


def obstructions(f: CylinderFunction, duals: DualSystem,
                 n_levels: int = 40) -> ObstructionReport:
    """Pair the lifted measure of f against every dual basis element.

    The coefficient against the positive dual equals the integral of f
    against the invariant measure; a bounded transfer function exists
    exactly when every coefficient vanishes (below 1e-8 times the sup
    norm of f).
    """
    lifted = build_phi_f(f, duals.split, duals.invariant.plus, n_levels)
    coeffs = np.array([pairing(lifted.measure, q, duals.level)
                       for q in duals.minus_basis])
    mean = nu_integral(f, duals.invariant)
    tol = 1e-8 * max(f.sup_norm(), 1e-30)
    consistency = abs(coeffs[0] - mean)
    if consistency > 1e-10 * max(1.0, abs(mean), f.sup_norm()):
        raise AssertionError(f"first coefficient {coeffs[0]} disagrees with the "
                             f"mean term {mean} by {consistency:.2e}")
    nonzero = [i for i, c in enumerate(coeffs) if abs(c) >= tol]
    if nonzero:
        return ObstructionReport(coeffs, mean, "nonzero", nonzero[0] + 1, tol)
    return ObstructionReport(coeffs, mean, "zero", None, tol)


# -- Birkhoff traces and transfer functions -------------------------------------


@dataclass(frozen=True)
class BirkhoffTrace:
    """Integral of f along the vertical flow with its running supremum.

    Records (time, integral, running sup) at every consumed arc
    boundary; ``value`` is the integral at ``time_achieved`` (the target
    time quantized to an arc boundary at the achieved refinement).
    """

    value: float
    time_achieved: float
    quantization_error: float
    times: np.ndarray
    integrals: np.ndarray
    running_sup: np.ndarray
    pieces_per_level: dict

    def to_csv_rows(self):
        for t, i, s in zip(self.times, self.integrals, self.running_sup):
            yield (t, i, s)


def birkhoff_integral(f: CylinderFunction, x0: PathWindow, T: float, plus,
                      rel_tol: float = 1e-9, max_refine: int = 400) -> BirkhoffTrace:
    """Integrate f along the flow started at x0 for time T.

    Consumes maximal Markovian arcs greedily (the same walk as
    :func:`adicflow.ordering.flow_advance`), adding each arc's integral;
    the running supremum is recorded at arc boundaries.  Raises
    :class:`WindowExhaustedError` when the orbit leaves the window.
    """
    if T < 0:
        raise ValueError("time must be nonnegative")
    times, integrals, sups = [0.0], [0.0], [0.0]
    pieces = {}
    cur = x0
    elapsed, integral, runsup = 0.0, 0.0, 0.0
    refinement = 0
    slack = 1e-12 * T if T > 0 else 0.0
    while True:
        remaining = T - elapsed
        if remaining <= rel_tol * T:
            break
        n_cap = _minimal_prefix_top(cur)
        consumed = False
        for n in range(n_cap, cur.lo - 1, -1):
            arc = MarkovArc(cur, n)
            mass = arc.mass(plus)
            if mass <= remaining + slack:
                nxt = successor(arc.max_path())
                if nxt is None:
                    raise WindowExhaustedError(
                        f"flow reached the top of the window at time {elapsed:.6g}")
                integral += arc_integral(f, arc, plus)
                elapsed += mass
                runsup = max(runsup, abs(integral))
                times.append(elapsed)
                integrals.append(integral)
                sups.append(runsup)
                pieces[n] = pieces.get(n, 0) + 1
                cur = nxt
                consumed = True
                break
        if consumed:
            continue
        if refinement >= max_refine:
            break
        step = 8
        refinement += step
        if hasattr(plus, "ensure_level"):
            plus.ensure_level(cur.lo - step - 1)
        cur = cur.refined(cur.lo - step)
    return BirkhoffTrace(integral, elapsed, T - elapsed,
                         np.array(times), np.array(integrals), np.array(sups),
                         pieces)


def fit_growth_exponent(times, sups, decades: float = 2.0) -> float:
    """Least-squares slope of log(sup) vs log(t) over the last decades of t."""
    t = np.asarray(times, dtype=float)
    s = np.asarray(sups, dtype=float)
    mask = (t >= t.max() / 10 ** decades) & (s > 0) & (t > 0)
    if mask.sum() < 2:
        return 0.0
    return float(np.polyfit(np.log(t[mask]), np.log(s[mask]), 1)[0])


@dataclass(frozen=True)
class TransferSample:
    """Samples of the transfer function u(t) along one flow orbit.

    ``u(0) = 0`` fixes the additive constant; ``warning`` is set when
    the obstruction verdict was not zero, in which case u cannot stay
    bounded.
    """

    times: np.ndarray
    values: np.ndarray
    sup_norm: float
    warning: str | None = None

    def to_csv_rows(self):
        yield from zip(self.times, self.values)


def transfer_function(f: CylinderFunction, x0: PathWindow, grid, plus,
                      duals: DualSystem | None = None) -> TransferSample:
    """Sample u(t) = integral of f over [x0, flow_t(x0)) on a time grid."""
    warning = None
    if duals is not None:
        report = obstructions(f, duals)
        if report.verdict != "zero":
            warning = (f"nonzero obstruction at index {report.first_nonzero}: "
                       "no bounded solution exists")
    grid = sorted(float(t) for t in grid)
    vals = []
    for t in grid:
        if t == 0.0:
            vals.append(0.0)
            continue
        trace = birkhoff_integral(f, x0, t, plus)
        vals.append(trace.value)
    values = np.array(vals)
    return TransferSample(np.array(grid), values,
                          float(np.max(np.abs(values))) if len(values) else 0.0,
                          warning)


# -- horizontal difference quotients --------------------------------------------


def horizontal_quotient(f: CylinderFunction, resolution: int,
                        inv: InvariantMeasure) -> CylinderFunction:
    """The discrete horizontal derivative of f at a resolution level.

    Moves each depth-``resolution`` path to its successor for the
    reversed order (cyclically: the maximal path wraps to the minimal
    climb, making the step measure-preserving, so the quotient
    integrates to zero against the invariant measure exactly) and
    divides the increment of f by the horizontal width of the atom.
    """
    if resolution < max(1, f.depth):
        raise ValueError("resolution must reach the function depth")
    d = f.diagram
    q = inv.minus.vector(resolution)
    values = []
    for c in cylinders(d, 0, resolution):
        x = PathWindow(d, 1, resolution, c.edges, "min")
        y = reversed_successor(x, cyclic=True)
        step = float(q[x.top_source()])
        values.append((f.value_on_path(y) - f.value_on_path(x)) / step)
    return CylinderFunction(d, resolution, np.array(values))
