"""Renormalization cocycle products, Lyapunov spectra, and splittings.

The cocycle over a diagram multiplies incidence matrices upward:
``product(d, a, b)`` maps vectors indexed by level-a vertices to vectors
indexed by level-b vertices via ``A_b ... A_{a+1}`` (and by exact
rational inverses when b < a).  Transpose products drive the reversed
direction: transporting a vector one level down multiplies by ``A_n^T``.

Lyapunov exponents are in nats per level.  Forward products are exact
(arbitrary-precision integers) until entries pass 1e300, after which the
product continues as a unit-scaled float frame with a separate log
scale; all spectral estimation uses per-level renormalized frames.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .diagram import Diagram

#: entry size at which exact integer products switch to scaled float frames
EXACT_ENTRY_LIMIT = 10 ** 300

#: resolvability requirement for finite-horizon splittings, in nats
SPLIT_NATS = 34.0


class GapUnresolvedError(RuntimeError):
    """Lyapunov estimates are too uncertain to separate a splitting."""


class DecayViolationError(ValueError):
    """A sequence declared to decay at rate theta does not."""


def _exact_inverse(A):
    """Exact inverse of an integer/rational matrix as Fractions (Gauss-Jordan)."""
    A = np.asarray(A, dtype=object)
    n = A.shape[0]
    if A.shape[0] != A.shape[1]:
        raise np.linalg.LinAlgError("inverse of a non-square matrix")
    M = [[Fraction(A[i, j]) for j in range(n)] + [Fraction(int(i == j)) for j in range(n)]
         for i in range(n)]
    for c in range(n):
        piv = next((r for r in range(c, n) if M[r][c] != 0), None)
        if piv is None:
            raise np.linalg.LinAlgError("singular incidence matrix in negative direction")
        M[c], M[piv] = M[piv], M[c]
        pv = M[c][c]
        M[c] = [x / pv for x in M[c]]
        for r in range(n):
            if r != c and M[r][c] != 0:
                f = M[r][c]
                M[r] = [x - f * y for x, y in zip(M[r], M[c])]
    out = np.empty((n, n), dtype=object)
    for i in range(n):
        for j in range(n):
            out[i, j] = M[i][n + j]
    return out


@dataclass(frozen=True)
class CocycleProduct:
    """Value of the cocycle between two levels.

    ``matrix`` is exact (object dtype, integers or Fractions) when
    ``exact`` is True; otherwise a float matrix to be read together with
    ``log_scale`` (true product = matrix * exp(log_scale)).
    """

    n_from: int
    n_to: int
    matrix: np.ndarray
    exact: bool = True
    log_scale: float = 0.0

    def as_float(self) -> np.ndarray:
        if self.exact:
            return np.asarray(self.matrix, dtype=float)
        return np.asarray(self.matrix, dtype=float) * math.exp(self.log_scale)

    def __matmul__(self, other: "CocycleProduct") -> "CocycleProduct":
        if other.n_to != self.n_from:
            raise ValueError(f"ranges not composable: {other.n_to} != {self.n_from}")
        if self.exact and other.exact:
            return CocycleProduct(other.n_from, self.n_to, self.matrix @ other.matrix)
        a, sa = (self.as_float(), 0.0) if self.exact else (np.asarray(self.matrix, float), self.log_scale)
        b, sb = (other.as_float(), 0.0) if other.exact else (np.asarray(other.matrix, float), other.log_scale)
        return CocycleProduct(other.n_from, self.n_to, a @ b, exact=False, log_scale=sa + sb)


def product(d: Diagram, n_from: int, n_to: int) -> CocycleProduct:
    """Cocycle value mapping level n_from to level n_to.

    Empty range gives the identity.  Forward ranges multiply incidence
    matrices exactly; backward ranges use exact rational inverses and
    raise on a singular matrix.  Both directions respect the declared
    window.
    """
    lo, hi = min(n_from, n_to), max(n_from, n_to)
    if n_from != n_to:
        d.require_window(lo + 1, hi)
    m = d.interface_size(n_from)
    if n_from == n_to:
        return CocycleProduct(n_from, n_to, np.eye(m, dtype=object))
    if n_to > n_from:
        P = np.eye(m, dtype=object)
        logs = 0.0
        exact = True
        for n in range(n_from + 1, n_to + 1):
            A = d.incidence_at(n)
            if exact:
                P = A @ P
                if max(abs(int(x)) for x in P.flat) > EXACT_ENTRY_LIMIT:
                    exact = False  # C1 switch: continue as a scaled float frame
                    s = float(max(abs(int(x)) for x in P.flat))
                    logs = math.log(s)
                    P = np.array([[float(Fraction(int(x), 1) / Fraction(int(s))) for x in row]
                                  for row in P])
            else:
                P = A.astype(float) @ P
                s = float(np.abs(P).max())
                if s > 0:
                    P /= s
                    logs += math.log(s)
        if exact:
            return CocycleProduct(n_from, n_to, P)
        return CocycleProduct(n_from, n_to, P, exact=False, log_scale=logs)
    # negative direction: inverse matrices, exact over the rationals
    P = np.eye(m, dtype=object)
    for n in range(n_from, n_to, -1):
        P = _exact_inverse(d.incidence_at(n)) @ P
    return CocycleProduct(n_from, n_to, P)


# -- Lyapunov spectrum -------------------------------------------------------


@dataclass(frozen=True)
class SpectrumResult:
    """Exponent estimates (descending) with batch-variance error bars.

    ``running[i, j]`` is the cumulative-mean estimate of exponent j after
    i+1 levels, the classical O(1/n) estimator; ``exponents`` discards a
    burn-in prefix so stationary diagrams resolve to full precision.
    """

    exponents: np.ndarray
    errors: np.ndarray
    running: np.ndarray
    base: int
    n_levels: int
    burn_in: int

    def to_csv_rows(self):
        for i in range(self.running.shape[0]):
            yield (i + 1, *self.running[i])


def lyapunov_spectrum(d: Diagram, n_max: int, base: int = 0,
                      burn_in: int | None = None, batches: int = 8) -> SpectrumResult:
    """Estimate the Lyapunov spectrum of the cocycle above ``base``.

    Re-orthonormalizes a full frame at every level (QR) and accumulates
    the log norms of the R diagonal.  Estimates average the post-burn-in
    increments; error bars are the standard error of sequential batch
    means over that tail.
    """
    if n_max < 10:
        raise ValueError("n_max must be at least 10")
    m = d.interface_size(base)
    for n in range(base, base + n_max + 1):
        if d.interface_size(n) != m:
            raise ValueError("spectrum estimation requires constant vertex count")
    if burn_in is None:
        burn_in = min(max(10, n_max // 5), n_max - 5)
    Q = np.eye(m)
    increments = np.empty((n_max, m))
    running = np.empty((n_max, m))
    acc = np.zeros(m)
    for i, n in enumerate(range(base + 1, base + n_max + 1)):
        Q = d.incidence_at(n).astype(float) @ Q
        Q, R = np.linalg.qr(Q)
        diag = np.abs(np.diag(R))
        if np.any(diag == 0):
            raise np.linalg.LinAlgError(f"cocycle frame collapsed at level {n}")
        inc = np.log(diag)
        increments[i] = inc
        acc += inc
        running[i] = acc / (i + 1)
    tail = increments[burn_in:]
    exponents = tail.mean(axis=0)
    nb = max(2, min(batches, len(tail) // 4)) if len(tail) >= 8 else 2
    cut = (len(tail) // nb) * nb
    bm = tail[:cut].reshape(nb, -1, m).mean(axis=1)
    errors = bm.std(axis=0, ddof=1) / math.sqrt(nb)
    order = np.argsort(-exponents)
    return SpectrumResult(exponents[order], errors[order], running[:, order],
                          base, n_max, burn_in)


# -- Oseledets splitting -----------------------------------------------------


@dataclass(frozen=True)
class OseledetsSplit:
    """Finite-horizon splitting R^m = unstable + central-stable at a level.

    ``unstable`` (m x k) spans the strictly expanding directions,
    ``costable`` (m x (m-k)) the rest; columns are orthonormal within
    each block.  ``residual`` is the invariance defect: the sine of the
    largest principal angle between the cocycle image of the unstable
    space and the unstable space one level up.
    """

    level: int
    unstable: np.ndarray
    costable: np.ndarray
    exponents: np.ndarray
    errors: np.ndarray
    horizon: int
    residual: float
    transpose: bool = False

    @property
    def dim_unstable(self) -> int:
        return self.unstable.shape[1]

    def project_unstable(self, w: np.ndarray) -> np.ndarray:
        """Oblique projection onto the unstable space along the costable one."""
        k = self.dim_unstable
        if k == 0:
            return np.zeros_like(np.asarray(w, float))
        B = np.hstack([self.unstable, self.costable])
        coeff = np.linalg.solve(B, np.asarray(w, float))
        return self.unstable @ coeff[:k]

    def unstable_coords(self, w: np.ndarray) -> np.ndarray:
        k = self.dim_unstable
        B = np.hstack([self.unstable, self.costable])
        return np.linalg.solve(B, np.asarray(w, float))[:k]

    def residual_norm(self, w: np.ndarray) -> float:
        """Relative size of the component of w outside the unstable space."""
        w = np.asarray(w, float)
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        return np.linalg.norm(w - self.project_unstable(w)) / nw

    def to_json(self) -> dict:
        return {
            "level": self.level,
            "transpose": self.transpose,
            "unstable_basis": self.unstable.tolist(),
            "costable_basis": self.costable.tolist(),
            "exponents": self.exponents.tolist(),
            "errors": self.errors.tolist(),
            "horizon": self.horizon,
            "invariance_defect": self.residual,
        }


def _scaled_product(d: Diagram, n_from: int, n_to: int) -> np.ndarray:
    """Float product A_{n_to} ... A_{n_from+1} renormalized to unit top scale."""
    m = d.interface_size(n_from)
    P = np.eye(m)
    for n in range(n_from + 1, n_to + 1):
        P = d.incidence_at(n).astype(float) @ P
        s = np.abs(P).max()
        if s > 0:
            P = P / s
    return P


def _count_positive(exponents, errors):
    """Number of strictly positive exponents; raises when 0 is straddled."""
    k = 0
    for th, er in zip(exponents, errors):
        lo, hi = th - 3 * er, th + 3 * er
        if lo > 0:
            k += 1
        elif hi < 0 or abs(th) <= 1e-9:
            continue
        else:
            raise GapUnresolvedError(
                f"exponent {th:.4g} +- {er:.2g} straddles zero; increase the horizon")
    return k


def _auto_horizon(exponents, k):
    """Horizon making (smallest relevant gap) x horizon >= SPLIT_NATS."""
    m = len(exponents)
    gaps = []
    if 0 < k:
        gaps.append(exponents[k - 1])  # separation of the slowest expanding direction from 1
    if 0 < k < m:
        gaps.append(exponents[k - 1] - exponents[k])
    gap = min(gaps) if gaps else 1.0
    gap = max(gap, 1e-3)
    return int(min(800, max(40, math.ceil(SPLIT_NATS / gap))))


def oseledets_split(d: Diagram, level: int, horizon: int | None = None,
                    transpose: bool = False, _defect: bool = True) -> OseledetsSplit:
    """Finite-horizon unstable/central-stable splitting at a level.

    The unstable space is read off the singular directions of the
    product arriving from ``horizon`` levels below (image directions of
    sustained stretch); the central-stable space from the slow right
    singular directions of the product continuing ``horizon`` levels up.
    With ``transpose=True`` the same two products, transposed, give the
    splitting of the transpose cocycle (which runs downward).
    """
    spec = lyapunov_spectrum(d, n_max=max(60, horizon or 60), base=level)
    k = _count_positive(spec.exponents, spec.errors)
    if horizon is None:
        horizon = _auto_horizon(spec.exponents, k)
    m = d.interface_size(level)
    back = _scaled_product(d, level - horizon, level)   # arrives at `level`
    fwd = _scaled_product(d, level, level + horizon)    # leaves `level`
    Ub, _, _ = np.linalg.svd(back)
    _, _, Vft = np.linalg.svd(fwd)
    Vf = Vft.T
    if transpose:
        # transpose cocycle: unstable = image of long downward transpose
        # products = top right-singular directions of the upward product
        unstable = Vf[:, :k]
        costable = Ub[:, k:]
    else:
        unstable = Ub[:, :k]
        costable = Vf[:, k:]
    if k < m and k > 0:
        # guard against a pathological overlap of the two independently
        # estimated blocks
        overlap = np.linalg.norm(unstable.T @ costable, 2)
        if overlap > 1 - 1e-8:
            raise GapUnresolvedError("unstable and central-stable estimates overlap")
    residual = 0.0
    if _defect and k > 0:
        if transpose:
            nxt = oseledets_split(d, level - 1, horizon, transpose=True, _defect=False)
            img = d.incidence_at(level).astype(float).T @ unstable
        else:
            nxt = oseledets_split(d, level + 1, horizon, transpose=False, _defect=False)
            img = d.incidence_at(level + 1).astype(float) @ unstable
        q, _ = np.linalg.qr(img)
        # sine of the largest principal angle between the image and the next space
        residual = float(np.linalg.norm(q - nxt.unstable @ (nxt.unstable.T @ q), 2))
    return OseledetsSplit(level, unstable, costable, spec.exponents, spec.errors,
                          horizon, residual, transpose)


# -- decay fitting -----------------------------------------------------------

#: defects below this relative floor count as exact zeros when fitting rates
ZERO_FLOOR = 1e-13


def fit_decay_rate(values, ns=None, floor_scale: float = 1.0):
    """Least-squares decay rate of |values| ~ C exp(-rate * n).

    Returns (rate, log_c).  Positive rate means decay.  Entries below
    ``ZERO_FLOOR * floor_scale`` are treated as exact zeros; a sequence
    of zeros decays faster than any exponential, reported as rate inf.
    """
    v = np.abs(np.asarray(values, dtype=float))
    if ns is None:
        ns = np.arange(1, len(v) + 1)
    ns = np.asarray(ns, dtype=float)
    mask = v > ZERO_FLOOR * floor_scale
    if mask.sum() == 0:
        return math.inf, -math.inf
    if mask.sum() == 1:
        return math.inf, float(np.log(v[mask][0]))
    slope, intercept = np.polyfit(ns[mask], np.log(v[mask]), 1)
    return -float(slope), float(intercept)


# -- drifted recurrence (bounded shadowing in the unstable space) ------------


@dataclass(frozen=True)
class DriftedSolution:
    """Solution of the drifted recurrence: a vector in the unstable space
    at the base level whose cocycle orbit stays uniformly close to the
    supplied sequence."""

    w_hat: np.ndarray
    bound: float
    base: int
    truncation_index: int
    delta: float
    fitted_rate: float
    split: OseledetsSplit
    terms: tuple


def solve_drifted_recurrence(d: Diagram, w_seq, theta: float, base: int = 0,
                             horizon: int | None = None,
                             splits=None) -> DriftedSolution:
    """Find w_hat in the unstable space at ``base`` shadowing ``w_seq``.

    ``w_seq[j]`` sits at level ``base + j`` (so w_seq[0] is at the base)
    and must nearly satisfy ``w_{j+1} = A w_j``, with defects decaying at
    the declared rate theta; this is verified and a
    :class:`DecayViolationError` raised otherwise.  The returned vector
    is the sum of the defect corrections pulled back through the
    unstable-restricted cocycle; terms are accumulated until they fall
    below 1e-14 of the partial sum.
    """
    w = [np.asarray(x, float) for x in w_seq]
    N = len(w)
    if N < 3:
        raise ValueError("need at least three vectors")
    if theta <= 0:
        raise ValueError("theta must be positive")
    mats = [d.incidence_at(base + j).astype(float) for j in range(1, N)]
    defects = [mats[j] @ w[j] - w[j + 1] for j in range(N - 1)]
    dnorms = np.array([np.linalg.norm(u) for u in defects])
    scale = max(np.linalg.norm(w[0]), max(np.linalg.norm(x) for x in w), 1.0)
    fitted_rate, _ = fit_decay_rate(dnorms, ns=np.arange(1, N), floor_scale=scale)
    if math.isfinite(fitted_rate) and fitted_rate < 0.5 * theta:
        raise DecayViolationError(
            f"declared decay rate {theta} violated: fitted rate {fitted_rate:.4f}")
    if splits is None:
        splits = [oseledets_split(d, base + j, horizon, _defect=False) for j in range(N)]
    base_split = splits[0]
    k = base_split.dim_unstable
    theta_pos = float(base_split.exponents[k - 1]) if k else 0.0
    delta = 0.5 * min(theta, theta_pos) if k else 0.5 * theta
    m = d.interface_size(base)
    if k == 0:
        w_hat = np.zeros(m)
        bound = _orbit_bound(d, w_hat, w, base)
        return DriftedSolution(w_hat, bound, base, 0, delta, fitted_rate,
                               base_split, ())
    # coordinate transport of the unstable blocks: A U_j = U_{j+1} M_j + defect
    terms = []
    term0 = base_split.unstable @ base_split.unstable_coords(w[0])
    terms.append(term0)
    Mprod = np.eye(k)
    trunc = 0
    for j in range(N - 1):
        Mj = splits[j + 1].unstable.T @ (mats[j] @ splits[j].unstable)
        Mprod = Mj @ Mprod
        u_plus = splits[j + 1].unstable_coords(-defects[j])  # w_{j+1} - A w_j
        coords = np.linalg.solve(Mprod, u_plus)
        term = base_split.unstable @ coords
        partial = np.linalg.norm(sum(terms))
        if partial > 0 and np.linalg.norm(term) < 1e-14 * partial:
            trunc = j + 1
            break
        terms.append(term)
        trunc = j + 1
    w_hat = np.asarray(sum(terms))
    bound = _orbit_bound(d, w_hat, w, base)
    return DriftedSolution(w_hat, bound, base, trunc, delta, fitted_rate,
                           base_split, tuple(terms))


def _orbit_bound(d, w_hat, w, base):
    """max_j | A_{base+j} ... A_{base+1} w_hat - w_j |, including j = 0."""
    v = np.asarray(w_hat, float)
    worst = np.linalg.norm(v - w[0])
    for j in range(1, len(w)):
        v = d.incidence_at(base + j).astype(float) @ v
        worst = max(worst, float(np.linalg.norm(v - w[j])))
    return worst
