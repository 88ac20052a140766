"""Finitely-additive measures on the vertical and horizontal arc systems.

A plus measure assigns a value to every downward arc (the set of paths
agreeing above a level); holonomy invariance means the value depends
only on the vertex the arc hangs from, so the measure is exactly a
family of vectors ``v_n`` indexed by level-n vertices satisfying

    v_n = A_n v_{n-1}          (one vector per level, transported upward)

A minus measure is the mirror object on upward arcs, transported
downward by the transposed matrices: ``q_{n-1} = A_n^T q_n``.  The
positive pair (unique up to scale once some product of incidence
matrices is strictly positive) multiplies into the invariant probability
measure of cylinders:

    nu(C) = v_n[bottom vertex of C] * q_{n+k}[top vertex of C].

Signed families correspond to vectors in the unstable spaces of the
cocycle and its transpose; the Euclidean pairing of a plus and a minus
family is independent of the level at which it is evaluated, and
biorthogonalizing the two unstable bases yields the dual systems used
for obstruction coefficients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cocycle import OseledetsSplit, fit_decay_rate, oseledets_split
from .diagram import Cylinder, Diagram


class NoPositivityError(RuntimeError):
    """No strictly positive product of incidence matrices in the window."""


class DegenerateDualSystemError(RuntimeError):
    """The plus/minus unstable pairing matrix is numerically singular."""


class LevelMismatchError(ValueError):
    """A measure was evaluated outside its materialized level range."""


@dataclass(frozen=True)
class FinAddMeasure:
    """A finitely-additive measure as a cocycle-equivariant vector family.

    ``vectors[n]`` lives on the level-n vertex set for n in
    [diagram.n_lo - 1, diagram.n_hi].  ``side`` is '+' for measures on
    downward arcs (transported up by A) and '-' for measures on upward
    arcs (transported down by A^T).  ``decay_rate`` is the fitted
    exponential rate of the family in its decaying direction (None when
    the window is too short to fit).
    """

    side: str
    diagram: Diagram
    vectors: dict
    anchor: int
    decay_rate: float | None = None
    label: str = ""
    perron: bool = False  # family known to lie on the positive direction

    def levels(self):
        return sorted(self.vectors)

    def vector(self, n: int) -> np.ndarray:
        try:
            return self.vectors[n]
        except KeyError:
            raise LevelMismatchError(
                f"level {n} outside materialized range "
                f"[{min(self.vectors)}, {max(self.vectors)}]") from None

    def ensure_level(self, n: int):
        """Materialize the family out to level n via the diagram extension.

        Flow refinement needs arc masses below the declared window; the
        transported values are deterministic, so extending in place
        preserves value semantics.  Steps against the expanding direction
        (down for '+', up for '-') amplify float dust by e^{th1-th2} per
        level unless the family is Perron-directional over a stationary
        extension, where they reduce to an exact scale.
        """
        lo, hi = min(self.vectors), max(self.vectors)
        d = self.diagram
        for k in range(lo - 1, n - 1, -1):
            if self.side == "+":
                self.vectors[k] = _contract(d, k + 1, self.vectors[k + 1], "+", self.perron)
            else:
                self.vectors[k] = d.incidence_at(k + 1).astype(float).T @ self.vectors[k + 1]
        for k in range(hi + 1, n + 1):
            if self.side == "+":
                self.vectors[k] = d.incidence_at(k).astype(float) @ self.vectors[k - 1]
            else:
                self.vectors[k] = _contract(d, k, self.vectors[k - 1], "-", self.perron)

    def arc_mass(self, level: int, vertex: int) -> float:
        """Mass of the canonical arc at ``level`` hanging from ``vertex``.

        For side '+' this is the measure of the set of paths that agree
        above ``level`` and pass through the given level-(level-1)
        vertex; holonomy invariance makes the representative immaterial.
        """
        if self.side == "+":
            return float(self.vector(level - 1)[vertex])
        return float(self.vector(level)[vertex])

    def scaled(self, c: float, label=None) -> "FinAddMeasure":
        return FinAddMeasure(self.side, self.diagram,
                             {n: c * v for n, v in self.vectors.items()},
                             self.anchor, self.decay_rate,
                             self.label if label is None else label)

    def plus(self, other: "FinAddMeasure") -> "FinAddMeasure":
        if other.side != self.side:
            raise ValueError("cannot add measures of different sides")
        return FinAddMeasure(self.side, self.diagram,
                             {n: self.vectors[n] + other.vectors[n] for n in self.vectors},
                             self.anchor, None, self.label)

    def to_json(self) -> dict:
        ns = self.levels()
        return {"side": self.side, "levels": ns,
                "vectors": [self.vector(n).tolist() for n in ns],
                "decay_rate": self.decay_rate}


def _contract(d: Diagram, graph_level: int, source, side: str, perron: bool):
    """Invert one incidence matrix; exact scale for stationary Perron families."""
    A = d.incidence_at(graph_level).astype(float)
    if perron and d.extension[0] == "stationary":
        lam = float(np.max(np.abs(np.linalg.eigvals(A))))
        return source / lam
    return np.linalg.solve(A if side == "+" else A.T, source)


def _propagate(d: Diagram, anchor: int, v0, side: str, perron: bool = False) -> dict:
    """Transport a vector at ``anchor`` across the window, both directions."""
    lo, hi = d.n_lo - 1, d.n_hi
    vecs = {anchor: np.asarray(v0, dtype=float)}
    for n in range(anchor + 1, hi + 1):
        if side == "+":
            vecs[n] = d.incidence_at(n).astype(float) @ vecs[n - 1]
        else:
            vecs[n] = _contract(d, n, vecs[n - 1], side, perron)
    for n in range(anchor - 1, lo - 1, -1):
        if side == "+":
            vecs[n] = _contract(d, n + 1, vecs[n + 1], side, perron)
        else:
            vecs[n] = d.incidence_at(n + 1).astype(float).T @ vecs[n + 1]
    return vecs


def _fit_family_decay(vectors: dict, anchor: int, side: str):
    """M3: least-squares slope of log|v| over the decaying half-window."""
    ns = sorted(vectors)
    if side == "+":
        decaying = [n for n in ns if n < anchor]
        dist = [anchor - n for n in decaying]
    else:
        decaying = [n for n in ns if n > anchor]
        dist = [n - anchor for n in decaying]
    if len(decaying) < 4:
        return None
    norms = [np.linalg.norm(vectors[n]) for n in decaying]
    scale = max(norms) if max(norms) > 0 else 1.0
    rate, _ = fit_decay_rate(norms, ns=dist, floor_scale=scale)
    return rate


def finadd_measure(d: Diagram, anchor: int, v0, side: str, label="",
                   perron: bool = False) -> FinAddMeasure:
    """Materialize the equivariant family through (anchor, v0) on the window."""
    vecs = _propagate(d, anchor, v0, side, perron)
    return FinAddMeasure(side, d, vecs, anchor, _fit_family_decay(vecs, anchor, side),
                         label, perron)


# -- the positive pair -------------------------------------------------------


def positivity_window(d: Diagram, max_levels: int | None = None) -> int | None:
    """Smallest k with A_{n_lo+k-1} ... A_{n_lo} strictly positive, else None."""
    cap = max_levels if max_levels is not None else d.n_hi - d.n_lo + 1
    P = np.eye(d.interface_size(d.n_lo - 1), dtype=object)
    for k in range(1, cap + 1):
        P = d.incidence_at(d.n_lo + k - 1) @ P
        if all(int(x) >= 1 for x in P.flat):
            return k
    return None


def _perron_vector(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    vals, vecs = np.linalg.eig(M)
    i = int(np.argmax(np.abs(vals)))
    v = np.real(vecs[:, i])
    v = np.abs(v)
    s = v.sum()
    if s == 0:
        raise NoPositivityError("leading eigenvector collapsed")
    return v / s


def _positive_seed(d: Diagram, interface: int, side: str, burn_in: int = 400) -> np.ndarray:
    """Direction of the positive family at one level.

    Stationary and periodic extensions admit an exact description (the
    leading eigenvector of the one-period product entering the level);
    seeded-random extensions push a uniform vector through a burn-in
    stretch of the extension until the direction stabilizes.
    """
    kind = d.extension[0]
    if kind in ("stationary", "periodic"):
        period = 1 if kind == "stationary" else len(d.extension[1])
        M = np.eye(d.interface_size(interface))
        if side == "+":
            for n in range(interface - period + 1, interface + 1):
                M = d.incidence_at(n).astype(float) @ M  # wraps to itself: square
            return _perron_vector(M)
        for n in range(interface + period, interface, -1):
            M = d.incidence_at(n).astype(float).T @ M
        return _perron_vector(M)
    if side == "+":
        v = np.ones(d.interface_size(interface - burn_in))
        for n in range(interface - burn_in + 1, interface + 1):
            v = d.incidence_at(n).astype(float) @ v
            v /= v.sum()
    else:
        v = np.ones(d.interface_size(interface + burn_in))
        for n in range(interface + burn_in, interface, -1):
            v = d.incidence_at(n).astype(float).T @ v
            v /= v.sum()
    return v


@dataclass(frozen=True)
class InvariantMeasure:
    """The positive plus/minus pair, normalized so nu has total mass 1."""

    plus: FinAddMeasure
    minus: FinAddMeasure
    anchor: int

    def nu(self, c: Cylinder) -> float:
        return nu_of_cylinder(self, c)

    def total_mass(self, n: int | None = None) -> float:
        n = self.anchor if n is None else n
        return float(self.plus.vector(n) @ self.minus.vector(n))


def pf_measures(d: Diagram) -> InvariantMeasure:
    """Construct the unique positive plus/minus measures on the window.

    Requires a strictly positive product of incidence matrices inside
    the window (raises :class:`NoPositivityError` otherwise).  The plus
    family is scaled to unit l1 norm at the anchor level (0 when the
    window contains it), the minus family so that the pairing -- and
    with it nu(X) -- equals 1.
    """
    if positivity_window(d) is None:
        raise NoPositivityError(
            f"no positivity window found in levels [{d.n_lo}, {d.n_hi}]")
    anchor = min(max(0, d.n_lo - 1), d.n_hi)
    p0 = _positive_seed(d, anchor, "+")
    q0 = _positive_seed(d, anchor, "-")
    plus = finadd_measure(d, anchor, p0 / p0.sum(), "+", label="pf+", perron=True)
    pairing0 = float(plus.vector(anchor) @ q0)
    minus = finadd_measure(d, anchor, q0 / pairing0, "-", label="pf-", perron=True)
    return InvariantMeasure(plus, minus, anchor)


def nu_of_cylinder(m: InvariantMeasure, c: Cylinder) -> float:
    """Mass of a cylinder: plus mass below times minus mass above."""
    d = m.plus.diagram
    if c.depth == 0:
        return float(m.plus.vector(c.base)[c.vertex] * m.minus.vector(c.base)[c.vertex])
    d.require_window(c.base + 1, c.base + c.depth)
    below = m.plus.vector(c.base)[c.bottom_vertex(d)]
    above = m.minus.vector(c.base + c.depth)[c.top_vertex(d)]
    return float(below * above)


# -- signed families and duality ---------------------------------------------


def finadd_from_vector(d: Diagram, split: OseledetsSplit, v, side: str,
                       label="") -> FinAddMeasure:
    """Lift an unstable vector at ``split.level`` to a measure family.

    The vector must lie in the unstable space of the corresponding
    cocycle (relative residual below 1e-9), which is exactly the
    condition for the transported family to decay in the backward
    direction.
    """
    v = np.asarray(v, dtype=float)
    if (side == "-") != split.transpose:
        raise ValueError("split orientation does not match measure side")
    res = split.residual_norm(v)
    if res > 1e-9:
        raise ValueError(f"vector has component outside the unstable space "
                         f"(residual {res:.2e})")
    return finadd_measure(d, split.level, v, side, label=label)


def pairing(p: FinAddMeasure, q: FinAddMeasure, n: int) -> float:
    """Euclidean pairing of a plus and a minus family at one level."""
    if p.side != "+" or q.side != "-":
        raise ValueError("pairing takes a plus and a minus measure")
    return float(p.vector(n) @ q.vector(n))


@dataclass(frozen=True)
class DualSystem:
    """Biorthogonal bases of the plus and minus measure spaces.

    ``plus_basis[0]`` and ``minus_basis[0]`` are the positive pair;
    the remaining elements span the signed directions, ordered by
    decreasing Lyapunov exponent, with pairing matrix the identity.
    """

    diagram: Diagram
    level: int
    plus_basis: tuple
    minus_basis: tuple
    exponents: np.ndarray
    invariant: InvariantMeasure
    split: OseledetsSplit
    tsplit: OseledetsSplit

    @property
    def dim(self) -> int:
        return len(self.plus_basis)

    def gram(self, n: int | None = None) -> np.ndarray:
        n = self.level if n is None else n
        return np.array([[pairing(p, q, n) for q in self.minus_basis]
                         for p in self.plus_basis])


def dual_system(d: Diagram, level: int = 0, horizon: int | None = None) -> DualSystem:
    """Build exponent-ordered biorthogonal plus/minus measure bases."""
    inv = pf_measures(d)
    split = oseledets_split(d, level, horizon)
    tsplit = oseledets_split(d, level, horizon, transpose=True)
    k = split.dim_unstable
    if tsplit.dim_unstable != k:
        raise DegenerateDualSystemError(
            f"unstable dimensions disagree: {k} vs {tsplit.dim_unstable}")
    if k == 0:
        raise DegenerateDualSystemError("no expanding directions: dual system is empty")
    # plus directions: the positive family first, then the slower singular
    # directions of the unstable block
    p_cols = [inv.plus.vector(level)]
    for j in range(1, k):
        p_cols.append(split.unstable[:, j])
    m_cols = [inv.minus.vector(level)]
    for j in range(1, k):
        m_cols.append(tsplit.unstable[:, j])
    G = np.array([[float(np.dot(p, q)) for q in m_cols] for p in p_cols])
    if np.linalg.cond(G) > 1e8:
        raise DegenerateDualSystemError(
            f"pairing matrix condition number {np.linalg.cond(G):.2e} exceeds 1e8")
    Ginv = np.linalg.inv(G)
    plus_meas = [inv.plus]
    for j in range(1, k):
        plus_meas.append(finadd_from_vector(d, split, p_cols[j], "+", label=f"plus[{j + 1}]"))
    minus_meas = []
    for j in range(k):
        vec = sum(Ginv[l, j] * m_cols[l] for l in range(k))
        minus_meas.append(finadd_measure(d, level, vec, "-", label=f"minus[{j + 1}]"))
    return DualSystem(d, level, tuple(plus_meas), tuple(minus_meas),
                      split.exponents[:k], inv, split, tsplit)


def base_decomposition(p: FinAddMeasure, duals: DualSystem) -> np.ndarray:
    """Coefficients of a plus measure in the biorthogonal basis.

    The reconstruction is checked at every materialized level; a
    residual above 1e-9 (relative) means the input family was not in the
    span of the basis.
    """
    coeffs = np.array([pairing(p, q, duals.level) for q in duals.minus_basis])
    for n in p.levels():
        recon = sum(c * b.vector(n) for c, b in zip(coeffs, duals.plus_basis))
        err = np.linalg.norm(p.vector(n) - recon)
        # tolerance is relative to the per-level magnitude of the families:
        # transported floats carry dust at eps times the dominant scale
        scale = max([1.0, float(np.linalg.norm(p.vector(n)))]
                    + [abs(c) * float(np.linalg.norm(b.vector(n)))
                       for c, b in zip(coeffs, duals.plus_basis)]
                    + [float(np.linalg.norm(b.vector(n))) for b in duals.plus_basis])
        if err > 1e-9 * scale:
            raise ValueError(f"decomposition residual {err:.2e} at level {n}; "
                             "family is not in the span of the basis")
    return coeffs


@dataclass(frozen=True)
class ProductFunctional:
    """The product of the positive plus measure with a minus family.

    Evaluates cylinders as plus-mass-below times the (signed) minus mass
    above; finitely additive over cylinder refinements, and equal to nu.
    when the minus family is the positive one.
    """

    plus_pf: FinAddMeasure
    minus: FinAddMeasure

    def __call__(self, c: Cylinder) -> float:
        d = self.plus_pf.diagram
        if c.depth == 0:
            return float(self.plus_pf.vector(c.base)[c.vertex]
                         * self.minus.vector(c.base)[c.vertex])
        below = self.plus_pf.vector(c.base)[c.bottom_vertex(d)]
        above = self.minus.vector(c.base + c.depth)[c.top_vertex(d)]
        return float(below * above)

    def total(self, n: int | None = None) -> float:
        n = self.plus_pf.anchor if n is None else n
        return float(self.plus_pf.vector(n) @ self.minus.vector(n))


def m_functional(inv: InvariantMeasure, q: FinAddMeasure, c: Cylinder) -> float:
    """Evaluate the obstruction functional attached to a minus family."""
    return ProductFunctional(inv.plus, q)(c)
