"""Node sets and the two approximant constructions.

Both constructions determine scalar coefficients by driving eikonal-equation
defects to zero at interpolation nodes: the plain build enforces the equation
itself at every node, and the refinement additionally enforces differentiated
equations, stage by stage, up to the requested order.

Corrections are drawn from one graded polynomial family centered at the base
point, every element of which vanishes there to third order (preserving the
boundary structure: zero value and gradient, exact second-order data).  In
one dimension the family is (x-y)^3 times Chebyshev polynomials of the node
interval, stored in factored root-product form; in higher dimensions it is
domain-normalized monomials of total order three and up, in graded-lex order.
One element is added per enforced equation, and the coupled system (quadratic
in the coefficients) is solved by damped Newton with the exact Jacobian,
starting from the zero-correction state so the solution branch is the one
that vanishes as the base quadratic becomes exact.

Derivative-equation pairing follows the staged recursion: a stage of monomial
order s enforces, for each multiindex beta of order s and each node k >= 1,
the derivative equation with multiindex beta - e_{i*} (first nonzero
component), in which a new coefficient appears with linear factor
(A grad q2)_{i*}/2; at the base node that equation is independent of every
coefficient (the approximant gradient vanishes there), so the full order-beta
equation is enforced instead, with linear factor exactly |beta| - 1.  The
base-node equations reproduce the local Taylor recursion of the squared
distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .approximant import Approximant, CorrectionTerm
from .errors import DegenerateBasis, DimensionMismatch, NoRealRoot, SingularEnforcement
from .metric import MetricField
from .polynomials import (
    MultiIndex,
    enumerate_multiindices,
    mi_binom,
    mi_order,
    mi_sub,
    submultiindices,
    unit_index,
    zero_index,
)

_DIAG_GRID = {1: 201, 2: 41, 3: 13}


def mesh_size(nodes: np.ndarray, box) -> float:
    """Max over a diagnostic grid of the distance to the nearest node."""
    n = nodes.shape[1]
    per_axis = _DIAG_GRID.get(n, 7)
    axes = [np.linspace(lo, hi, per_axis) for lo, hi in box]
    grid = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=-1)
    d2 = ((grid[:, None, :] - nodes[None, :, :]) ** 2).sum(axis=2)
    return float(np.sqrt(d2.min(axis=1)).max())


@dataclass
class NodeSet:
    """Ordered interpolation points with the base point first."""

    nodes: np.ndarray
    box: Tuple[Tuple[float, float], ...]
    h: float = 0.0

    def __post_init__(self):
        self.nodes = np.atleast_2d(np.asarray(self.nodes, dtype=float))
        self.box = tuple((float(lo), float(hi)) for lo, hi in self.box)
        d2 = ((self.nodes[:, None, :] - self.nodes[None, :, :]) ** 2).sum(axis=2)
        np.fill_diagonal(d2, np.inf)
        if d2.min() <= 1e-24:
            raise DimensionMismatch("interpolation nodes must be pairwise distinct")
        if self.h == 0.0:
            self.h = mesh_size(self.nodes, self.box)

    @property
    def count(self) -> int:
        """Number of nodes beyond the base point."""
        return self.nodes.shape[0] - 1

    @property
    def y(self) -> np.ndarray:
        return self.nodes[0]

    def shared_coordinate_pairs(self, tol: float = 1e-12):
        """Diagnostic: node pairs sharing some coordinate."""
        out = []
        m, _ = self.nodes.shape
        for a in range(m):
            for b in range(a + 1, m):
                if np.any(np.abs(self.nodes[a] - self.nodes[b]) <= tol):
                    out.append((a, b))
        return out


def leja_order(y: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Greedy ordering maximizing products of per-axis coordinate differences.

    Keeps node orderings deterministic and coordinate-separated, which also
    stabilizes the enforcement systems.  Ties break toward the lowest index.
    """
    y = np.asarray(y, dtype=float).ravel()
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[0] == 0:
        return points

    def coord_log(p, q):
        return float(np.sum(np.log(np.maximum(np.abs(p - q), 1e-300))))

    logsum = np.array([coord_log(p, y) for p in points])
    remaining = list(range(points.shape[0]))
    order = []
    while remaining:
        best = max(remaining, key=lambda idx: (logsum[idx], -idx))
        order.append(best)
        remaining.remove(best)
        for idx in remaining:
            logsum[idx] += coord_log(points[idx], points[best])
    return points[order]


def equispaced_nodes(box, y, per_axis: int) -> NodeSet:
    """Tensor grid over the box; the base point joins (or replaces) its grid slot."""
    y = np.asarray(y, dtype=float).ravel()
    axes = [np.linspace(lo, hi, per_axis) for lo, hi in box]
    grid = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=-1)
    dist = np.linalg.norm(grid - y, axis=1)
    keep = grid[dist > 1e-12]
    ordered = leja_order(y, keep)
    return NodeSet(np.vstack([y[None, :], ordered]), box)


def clustered_nodes(box, y, per_axis: int) -> NodeSet:
    """Chebyshev-Lobatto tensor grid (endpoints included).

    Edge clustering keeps high-order derivative enforcement stable between
    nodes, where uniform grids oscillate.
    """
    y = np.asarray(y, dtype=float).ravel()
    axes = []
    for lo, hi in box:
        t = np.cos(np.pi * np.arange(per_axis) / (per_axis - 1))[::-1]
        axes.append(0.5 * (lo + hi) + 0.5 * (hi - lo) * t)
    grid = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=-1)
    dist = np.linalg.norm(grid - y, axis=1)
    keep = grid[dist > 1e-12]
    ordered = leja_order(y, keep)
    return NodeSet(np.vstack([y[None, :], ordered]), box)


def jittered_nodes(box, y, count: int, seed: int = 0, amplitude: float = 0.4) -> NodeSet:
    """Stratified per-axis jitter: each node owns one slot per axis.

    Every axis is split into ``count`` strata; each node receives one jittered
    coordinate per axis, with the strata of secondary axes assigned by a
    seeded permutation.  All per-axis coordinate gaps are then of order
    range/count, so no two nodes share a coordinate.
    """
    y = np.asarray(y, dtype=float).ravel()
    n = len(box)
    rng = np.random.default_rng(seed)
    coords = np.empty((count, n))
    for i in range(n):
        lo, hi = box[i]
        width = (hi - lo) / count
        centers = lo + (np.arange(count) + 0.5) * width
        vals = centers + rng.uniform(-amplitude, amplitude, size=count) * width
        order = np.arange(count) if i == 0 else rng.permutation(count)
        coords[:, i] = vals[order]
    keep = coords[np.linalg.norm(coords - y, axis=1) > 1e-9]
    ordered = leja_order(y, keep)
    return NodeSet(np.vstack([y[None, :], ordered]), box)


def explicit_nodes(box, points) -> NodeSet:
    """User-supplied node list, first entry is the base point; order respected."""
    return NodeSet(np.atleast_2d(np.asarray(points, dtype=float)), box)


@dataclass
class BuildSpec:
    """Construction options.

    ``m`` is the derivative-enforcement ceiling of the refinement.  ``branch``
    names the solution-branch policy of the coupled solves; "smallest" (the
    only implemented policy) starts Newton from the zero-correction state, so
    the correction vanishes as the base quadratic becomes exact.
    """

    m: int = 0
    branch: str = "smallest"
    polish: bool = True
    newton_tol: float = 1e-12
    newton_max_iter: int = 60
    singular_tol: float = 1e-12


# -- correction families --------------------------------------------------------


def _chebyshev_envelope_terms(box, y, count: int) -> List[CorrectionTerm]:
    """1D family: (x-y)^3 times Chebyshev polynomials of the node interval.

    Element j has degree j+3 and is stored in factored form using the real
    roots of T_j, so derivative jets stay exact; the scale bounds each element
    by O(1) on the box.
    """
    lo, hi = box[0]
    c, s = 0.5 * (lo + hi), 0.5 * (hi - lo)
    span = max(abs(lo - y[0]), abs(hi - y[0]))
    out = []
    for j in range(count):
        if j == 0:
            roots = np.asarray([y[0], y[0], y[0]])
            scale = span**-3
        else:
            cheb = c + s * np.cos(np.pi * (2 * np.arange(j) + 1) / (2 * j))
            roots = np.concatenate([[y[0]] * 3, cheb])
            # T_j(t) = 2^{j-1} prod (t - t_i) on [-1, 1]; t = (x - c)/s
            scale = 2.0 ** (j - 1) / s**j / span**3
        out.append(
            CorrectionTerm(
                kind="spectral", node=0, beta=(j + 3,), coefficient=0.0, scale=scale,
                roots=(roots,), mults=(np.ones(len(roots), dtype=int) * 1,), quad=None,
            )
        )
        out[-1].mults = (np.asarray([3] + [1] * (len(roots) - 3), dtype=int),)
        out[-1].roots = (np.concatenate([[y[0]], roots[3:]]),)
    return out


def _monomial_terms(box, y, count: int) -> List[CorrectionTerm]:
    """n-D family: domain-normalized monomials of total order >= 3, graded-lex."""
    n = len(box)
    spans = [max(abs(lo - y[i]), abs(hi - y[i])) for i, (lo, hi) in enumerate(box)]
    betas: List[MultiIndex] = []
    order = 3
    while len(betas) < count:
        for b in enumerate_multiindices(n, order):
            betas.append(b)
            if len(betas) == count:
                break
        order += 1
    out = []
    for beta in betas:
        roots = []
        mults = []
        scale = 1.0
        for i in range(n):
            roots.append(np.asarray([y[i]] if beta[i] > 0 else [], dtype=float))
            mults.append(np.asarray([beta[i]] if beta[i] > 0 else [], dtype=int))
            scale /= spans[i] ** beta[i]
        out.append(
            CorrectionTerm(
                kind="spectral", node=0, beta=tuple(beta), coefficient=0.0,
                scale=scale, roots=tuple(roots), mults=tuple(mults), quad=None,
            )
        )
    return out


def _correction_family(box, y, count: int) -> List[CorrectionTerm]:
    if len(box) == 1:
        return _chebyshev_envelope_terms(box, y, count)
    return _monomial_terms(box, y, count)


# -- defect assembly -------------------------------------------------------------


def _metric_tables(metric: MetricField, nodes: np.ndarray, bp_max: MultiIndex):
    """Per node: nonzero derivative matrices of the diffusion coefficients."""
    n = metric.n
    out = []
    vals = {}
    for bp in submultiindices(bp_max):
        mat = np.empty((nodes.shape[0], n, n))
        for i in range(n):
            for j in range(n):
                mat[:, i, j] = metric.entry_derivative_many(i, j, bp, nodes)
        vals[bp] = mat
    for k in range(nodes.shape[0]):
        row = {}
        for bp, mat in vals.items():
            if np.any(mat[k]):
                row[bp] = mat[k]
        out.append(row)
    return out


def _defect_at(qrow, a_at_node, alpha: MultiIndex, n: int) -> Tuple[float, float]:
    """Defect of the alpha-differentiated eikonal equation from a value table.

    Returns (defect, scale); scale sums absolute contributions, giving the
    natural rounding floor of the assembly.
    """
    out = -qrow[alpha]
    scale = abs(qrow[alpha])
    for bp in submultiindices(alpha):
        amat = a_at_node.get(bp)
        if amat is None:
            continue
        cb = mi_binom(alpha, bp)
        rem = mi_sub(alpha, bp)
        rem_subs = submultiindices(rem)
        for i in range(n):
            ei = unit_index(n, i)
            for j in range(n):
                ej = unit_index(n, j)
                if amat[i, j] == 0.0:
                    continue
                s = 0.0
                sa = 0.0
                for gamma in rem_subs:
                    cg = mi_binom(rem, gamma)
                    mu1 = tuple(g + e for g, e in zip(gamma, ei))
                    mu2 = tuple(r - g + e for r, g, e in zip(rem, gamma, ej))
                    v = cg * qrow[mu1] * qrow[mu2]
                    s += v
                    sa += abs(v)
                out += 0.25 * cb * amat[i, j] * s
                scale += 0.25 * cb * abs(amat[i, j]) * sa
    return out, scale


def _directional_at(trow, qrow, a_at_node, alpha: MultiIndex, n: int) -> float:
    """Derivative of the defect with respect to one term's coefficient."""
    out = -trow[alpha]
    for bp in submultiindices(alpha):
        amat = a_at_node.get(bp)
        if amat is None:
            continue
        cb = mi_binom(alpha, bp)
        rem = mi_sub(alpha, bp)
        rem_subs = submultiindices(rem)
        for i in range(n):
            ei = unit_index(n, i)
            for j in range(n):
                ej = unit_index(n, j)
                if amat[i, j] == 0.0:
                    continue
                s = 0.0
                for gamma in rem_subs:
                    cg = mi_binom(rem, gamma)
                    mu1 = tuple(g + e for g, e in zip(gamma, ei))
                    mu2 = tuple(r - g + e for r, g, e in zip(rem, gamma, ej))
                    s += cg * trow[mu1] * qrow[mu2]
                out += 0.5 * cb * amat[i, j] * s
    return out


def _blend_tables(a_by_node, a_y: np.ndarray, t: float):
    """Tables of the blended metric (1-t)*A(y) + t*A(x)."""
    out = []
    zero = tuple(0 for _ in range(a_y.shape[0]))
    for row in a_by_node:
        new = {}
        for bp, mat in row.items():
            new[bp] = t * mat
        base = new.get(zero, np.zeros_like(a_y)) + (1.0 - t) * a_y
        new[zero] = base
        out.append(new)
    return out


class _System:
    """Coupled enforcement system over a fixed term basis at the nodes."""

    def __init__(self, q, pairs, unknown_terms, a_by_node, base_tab, term_tabs):
        self.q = q
        self.pairs = pairs
        self.unknown_terms = unknown_terms
        self.a_by_node = a_by_node
        self.base_tab = base_tab
        self.term_tabs = term_tabs
        self.n = q.n
        self.nnodes = q.nodes.shape[0]

    def rows_for(self, coeffs: Optional[np.ndarray] = None):
        cum = {mu: v.copy() for mu, v in self.base_tab.items()}
        cvals = [t.coefficient for t in self.q.corrections]
        if coeffs is not None:
            for t_idx, c in zip(self.unknown_terms, coeffs):
                cvals[t_idx] = float(c)
        for c, tab in zip(cvals, self.term_tabs):
            if c != 0.0:
                for mu in cum:
                    cum[mu] += c * tab[mu]
        return [{mu: float(v[k]) for mu, v in cum.items()} for k in range(self.nnodes)]

    def defect_vector(self, coeffs: Optional[np.ndarray] = None):
        rows = self.rows_for(coeffs)
        g = np.array(
            [_defect_at(rows[k], self.a_by_node[k], alpha, self.n)[0]
             for k, alpha in self.pairs]
        )
        return g, rows

    def solve(self, tol: float, max_iter: int) -> float:
        """Damped Newton on the coefficient vector; returns achieved max defect.

        The defects are quadratic in the coefficients, so the Jacobian is
        exact; step halving guards the transient and the best iterate is kept.
        """
        coeffs = np.array([self.q.corrections[t].coefficient for t in self.unknown_terms])
        if coeffs.size == 0:
            return 0.0
        g, rows = self.defect_vector(coeffs)
        obj = float(g @ g)
        best, best_obj = coeffs.copy(), obj
        for _ in range(max_iter):
            if np.max(np.abs(g)) < tol:
                break
            jac = np.empty((len(self.pairs), len(self.unknown_terms)))
            for col, t_idx in enumerate(self.unknown_terms):
                tab = self.term_tabs[t_idx]
                trows = [
                    {mu: float(v[k]) for mu, v in tab.items()} for k in range(self.nnodes)
                ]
                for row_i, (k, alpha) in enumerate(self.pairs):
                    jac[row_i, col] = _directional_at(
                        trows[k], rows[k], self.a_by_node[k], alpha, self.n
                    )

            def try_step(delta):
                if not np.all(np.isfinite(delta)):
                    return None
                g_new, rows_new = self.defect_vector(coeffs + delta)
                obj_new = float(g_new @ g_new)
                if np.isfinite(obj_new) and obj_new < obj:
                    return delta, g_new, rows_new, obj_new
                return None

            accepted = None
            try:
                newton = np.linalg.solve(jac, -g)
            except np.linalg.LinAlgError:
                newton = np.linalg.lstsq(jac, -g, rcond=None)[0]
            if np.all(np.isfinite(newton)):
                step = 1.0
                for _ in range(45):
                    accepted = try_step(step * newton)
                    if accepted is not None:
                        break
                    step *= 0.5
            if accepted is None:
                # Regularized steps punch through saddle plateaus where the
                # pure Newton direction stalls.
                jtj = jac.T @ jac
                jtg = jac.T @ g
                diag = np.diag(jtj).copy()
                diag[diag <= 0.0] = 1.0
                for lam in (1e-8, 1e-6, 1e-4, 1e-2, 1.0, 1e2):
                    try:
                        delta = np.linalg.solve(jtj + lam * np.diag(diag), -jtg)
                    except np.linalg.LinAlgError:
                        continue
                    accepted = try_step(delta)
                    if accepted is not None:
                        break
            if accepted is None:
                break
            delta, g, rows, obj = accepted
            coeffs = coeffs + delta
            if obj < best_obj:
                best, best_obj = coeffs.copy(), obj
        for t_idx, c in zip(self.unknown_terms, best):
            self.q.corrections[t_idx].coefficient = float(c)
        g_final, _ = self.defect_vector()
        return float(np.max(np.abs(g_final)))


# -- builders ---------------------------------------------------------------------


def build_lp(metric: MetricField, nodeset: NodeSet, spec: Optional[BuildSpec] = None) -> Approximant:
    """Enforce the plain eikonal equation at every node.

    One correction element per node; the coupled node-equation system is
    solved by damped Newton from the bare quadratic.
    """
    spec = spec or BuildSpec()
    nodes = nodeset.nodes
    n = metric.n
    y = nodes[0]
    q = Approximant(
        metric=metric,
        y=y.copy(),
        base_matrix=metric.invert_at(y),
        corrections=[],
        nodes=nodes.copy(),
        enforced=[(0, zero_index(n))],
        built_with_m=0,
        mode="lp",
    )
    q.trace = []
    q.enforcement_norm = 0.0
    nn = nodes.shape[0] - 1
    if nn == 0:
        return q
    q.corrections.extend(_correction_family(nodeset.box, y, nn))
    pairs = [(k, zero_index(n)) for k in range(1, nn + 1)]
    unknowns = list(range(nn))
    a_by_node = _metric_tables(metric, nodes, zero_index(n))
    upto = tuple(1 for _ in range(n))
    base_tab = q._base_term().basis_table(nodes, upto)
    term_tabs = [t.basis_table(nodes, upto) for t in q.corrections]
    system = _System(q, pairs, unknowns, a_by_node, base_tab, term_tabs)
    norm = system.solve(spec.newton_tol, spec.newton_max_iter)
    if norm > 1e-9:
        # Continuation from the frozen-at-y metric: the zero-coefficient
        # state solves t=0 exactly, and each step stays in the Newton basin.
        for t_idx in unknowns:
            q.corrections[t_idx].coefficient = 0.0
        a_y = metric.A_at(y)
        for t in (0.2, 0.4, 0.6, 0.75, 0.85, 0.92, 0.97, 1.0):
            system.a_by_node = _blend_tables(a_by_node, a_y, t)
            norm = system.solve(spec.newton_tol, spec.newton_max_iter)
        system.a_by_node = a_by_node
    q.enforcement_norm = norm
    if norm > 1e-9:
        g, _ = system.defect_vector()
        raise NoRealRoot(int(np.argmax(np.abs(g))) + 1, float(norm))
    g, _ = system.defect_vector()
    for (k, _alpha), t_idx, d in zip(pairs, unknowns, g):
        term = q.corrections[t_idx]
        q.enforced.append((k, zero_index(n)))
        q.trace.append(("lp", "-".join(str(b) for b in term.beta), k,
                        term.coefficient, float(d)))
    return q


def build_hsp(metric: MetricField, nodeset: NodeSet, spec: BuildSpec) -> Approximant:
    """Staged enforcement of differentiated eikonal equations at all nodes.

    Stage of monomial order s adds, for each multiindex beta of order s in
    graded-lex order, the base-node equation of order beta and, per node
    k >= 1, the equation with multiindex beta - e_{i*} (deduplicated).  The
    correction family is extended by one element per equation and the full
    system is re-solved from the plain-build state.  Diagnostics: the linear
    factor each new equation offers to a fresh coefficient is checked up
    front, so degenerate layouts fail fast instead of producing a singular
    system.
    """
    if spec.m < 1:
        raise DimensionMismatch("refinement needs m >= 1")
    q = build_lp(metric, nodeset, spec)
    q.mode = "hsp"
    q.built_with_m = spec.m
    nodes = nodeset.nodes
    n = metric.n
    nnodes = nodes.shape[0]
    nn = nnodes - 1
    upto = tuple(spec.m + 3 for _ in range(n))
    a_by_node = _metric_tables(metric, nodes, tuple(spec.m + 2 for _ in range(n)))
    pairs: List[Tuple[int, MultiIndex]] = [(k, zero_index(n)) for k in range(1, nnodes)]
    claimed = set(pairs)
    stage_rows = []
    grad0 = None
    if nn > 0:
        ones = tuple(1 for _ in range(n))
        gtab = q.derivative_table(nodes, ones)
        grad0 = np.stack([gtab[unit_index(n, i)] for i in range(n)], axis=-1)
    for stage in range(3, spec.m + 3):
        for beta in enumerate_multiindices(n, stage):
            i_star = next(i for i in range(n) if beta[i] >= 1)
            alpha_side = mi_sub(beta, unit_index(n, i_star))
            for k in range(nnodes):
                eq_alpha = tuple(beta) if k == 0 else alpha_side
                if k == 0:
                    kcoef = float(mi_order(beta) - 1)
                else:
                    kcoef = 0.5 * float((metric.A_at(nodes[k]) @ grad0[k])[i_star])
                if abs(kcoef) < spec.singular_tol:
                    raise SingularEnforcement(beta, k, kcoef)
                pair = (k, eq_alpha)
                if pair not in claimed:
                    claimed.add(pair)
                    pairs.append(pair)
                    q.enforced.append(pair)
                    stage_rows.append((stage, beta, k, eq_alpha))
    family = _correction_family(nodeset.box, y=nodes[0], count=len(pairs))
    for term in family[nn:]:
        q.corrections.append(term)
    base_tab = q._base_term().basis_table(nodes, upto)
    term_tabs = [t.basis_table(nodes, upto) for t in q.corrections]
    unknowns = list(range(len(q.corrections)))
    system = _System(q, pairs, unknowns, a_by_node, base_tab, term_tabs)
    norm = system.solve(spec.newton_tol, spec.newton_max_iter)
    if norm > 1e-9:
        lp_state = [q.corrections[t].coefficient for t in unknowns]
        a_y = metric.A_at(nodes[0])
        for t in (0.2, 0.4, 0.6, 0.75, 0.85, 0.92, 0.97, 1.0):
            system.a_by_node = _blend_tables(a_by_node, a_y, t)
            norm = system.solve(spec.newton_tol, spec.newton_max_iter)
        system.a_by_node = a_by_node
        if norm > 1e-9:
            for t_idx, c in zip(unknowns, lp_state):
                q.corrections[t_idx].coefficient = c
            norm = system.solve(spec.newton_tol, spec.newton_max_iter)
    q.enforcement_norm = norm
    rows = system.rows_for()
    for (stage, beta, k, eq_alpha), t_idx in zip(stage_rows, range(nn, len(pairs))):
        after, _ = _defect_at(rows[k], a_by_node[k], eq_alpha, n)
        q.trace.append((stage, "-".join(str(b) for b in beta), k,
                        q.corrections[t_idx].coefficient, after))
    return q


def enforced_set(q: Approximant) -> List[Tuple[int, MultiIndex]]:
    """Every (node index, multiindex) pair whose equation the build enforces."""
    return list(q.enforced)
