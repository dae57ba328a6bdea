"""Sensing-capacity lower bounds and the random-coding error exponent.

Every bound here has the form

    C_LB(D) = min over admissible joint types lambda of  KL(lambda) / gap(lambda)

where KL is D(P^gamma_{XY} || Q^lambda_{XY}) (alpha-weighted for mixtures) and
``gap`` is the exponent of the number of confusable vectors.  The arbitrary
connections variants have few free coordinates and are minimized on a grid
(``clb_grid``); the contiguous and 2D variants are solved by bisection on R
over the convex inner problem min KL - R * gap (``clb_bisect``).
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.optimize import minimize_scalar
from scipy.special import entr, rel_entr

from .errors import (
    ConditionalUndefined,
    ConfigError,
    DimensionTooLarge,
    EvenReplication,
    InfeasibleLambda,
    InnerSolverDiverged,
    InvalidProbability,
    NoMixture,
)
from .models import (
    ModelSpec,
    joint_output_dist_batch,
    make_exponential_noise,
    output_dist_batch,
    simple_model,
)
from .types import (
    INFINITE,
    JointType,
    TypeHistogram,
    center_index,
    conditional_entropy,
    shift_inconsistency,
    symbol_marginal,
    type_marginals,
    uniform_type,
)

log = logging.getLogger(__name__)

LN2 = math.log(2)
GRID_VARIANTS = ("theorem1", "nonbinary", "map_prior", "heterogeneous")
CONVEX_VARIANTS = ("theorem2", "twod")
VARIANTS = GRID_VARIANTS + CONVEX_VARIANTS
DENOMINATOR_EPS = 1e-12
FEASIBILITY_TOL = 1e-8
MAX_GRID = 10 ** 7
POLAR_FLOOR = 1e-9   # smallest distortion level on the log-spaced grid axis


@dataclass(frozen=True)
class SolverOptions:
    grid_points: int = 200          # grid intervals per free coordinate (binary alphabet)
    refinements: int = 3
    max_grid: int = 200_000         # evaluation budget for |V| > 2 grids
    bisection_tol: float = 1e-3
    inner_tol: float = 1e-9         # min f below -inner_tol means R is not achievable
    max_iters: int = 60             # bisection steps
    shift_consistency: bool = True  # theorem2: require valid circular joint types
    rho_points: int = 64


@dataclass(frozen=True, eq=False)
class BoundProblem:
    model: ModelSpec
    D: float
    variant: Optional[str] = None
    options: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        if not 0.0 <= self.D <= 1.0:
            raise ConfigError(f"distortion must lie in [0, 1], got {self.D}", field="D")
        variant = self.variant or default_variant(self.model)
        object.__setattr__(self, "variant", variant)
        if variant not in VARIANTS:
            raise ConfigError(f"unknown variant {variant!r}", field="variant")
        disc = self.model.discipline
        need = {"theorem2": "contiguous1d", "twod": "contiguous2d"}.get(variant, "arbitrary")
        if disc != need:
            raise ConfigError(f"variant {variant} needs a {need} model, got {disc}",
                              field="variant")
        if variant == "theorem1" and self.model.alphabet_size != 2:
            raise ConfigError("theorem1 is the binary bound; use 'nonbinary'", field="variant")
        if variant == "heterogeneous" and not self.model.mixture:
            raise NoMixture("heterogeneous bound needs mixture classes", field="mixture")

    def with_D(self, D: float) -> "BoundProblem":
        return replace(self, D=float(D))

    def with_model(self, model: ModelSpec) -> "BoundProblem":
        return replace(self, model=model)


def default_variant(model: ModelSpec) -> str:
    if model.discipline == "contiguous1d":
        return "theorem2"
    if model.discipline == "contiguous2d":
        return "twod"
    if model.mixture:
        return "heterogeneous"
    if model.prior is not None:
        return "map_prior"
    if model.alphabet_size > 2:
        return "nonbinary"
    return "theorem1"


@dataclass(eq=False)
class BoundResult:
    clb: float
    D: float
    variant: str
    lambda_star: Optional[JointType]
    numerator: float
    denominator: float
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "clb": self.clb,
            "D": self.D,
            "variant": self.variant,
            "lambda_star": self.lambda_star.to_dict() if self.lambda_star is not None else None,
            "numerator": self.numerator,
            "denominator": self.denominator,
            "diagnostics": self.diagnostics,
        }


@dataclass(eq=False)
class ExponentResult:
    rho: float
    E_value: float
    Er_value: float
    gamma: Optional[np.ndarray]
    lam: Optional[JointType]
    R: float = 0.0
    D: float = 0.0

    def achievable(self, tol: float = 1e-9) -> bool:
        return self.Er_value > tol

    def to_dict(self) -> dict:
        return {
            "R": self.R,
            "D": self.D,
            "rho": self.rho,
            "E": self.E_value,
            "Er": self.Er_value,
            "gamma": None if self.gamma is None else [float(x) for x in self.gamma],
            "lambda": None if self.lam is None else self.lam.to_dict(),
        }


# ---------------------------------------------------------------------------
# problem geometry


class Geometry:
    """Everything about a variant's feasible set and objective, in flat-lambda coordinates."""

    def __init__(self, problem: BoundProblem):
        model = problem.model
        self.problem = problem
        self.model = model
        self.variant = problem.variant
        self.V = V = model.alphabet_size
        self.stencil = model.stencil
        if self.variant in GRID_VARIANTS:
            self.order = 1
        elif self.variant == "theorem2":
            self.order = model.type_order
        else:
            self.order = len(self.stencil)
        self.N = V ** self.order
        self.n_vars = self.N * self.N
        self.shift = (self.variant == "theorem2" and problem.options.shift_consistency
                      and self.order > 1)

        if self.variant in ("theorem1", "nonbinary"):
            self.gamma_i = np.full(V, 1.0 / V)
        elif self.variant in ("map_prior", "heterogeneous"):
            self.gamma_i = model.prior_or_uniform()
        elif self.variant == "theorem2":
            self.gamma_i = uniform_type(self.order, V).probs
        else:
            self.gamma_i = None
        self.prior = model.prior_or_uniform()

        a_idx, b_idx = np.divmod(np.arange(self.n_vars), self.N)
        pos = 0 if self.stencil is None else center_index(self.stencil)
        shift = V ** (self.order - 1 - pos)
        self.a_sym = (a_idx // shift) % V
        self.b_sym = (b_idx // shift) % V
        self.offdiag_vector = (self.a_sym != self.b_sym).astype(float)

        self.fixed_pxy = None
        if self.gamma_i is not None:
            self.fixed_pxy = [
                output_dist_batch(model, self.gamma_i[None, :], cls.psi, self.order)[0][:, None]
                * cls.noise.matrix
                for cls in model.classes()
            ]

    # -- numpy evaluation -------------------------------------------------

    def pair_laws(self, lams: np.ndarray, cls) -> np.ndarray:
        return joint_output_dist_batch(self.model, lams, cls.psi, self.order)

    def numerator(self, lams: np.ndarray) -> np.ndarray:
        lams = np.atleast_2d(lams)
        total = np.zeros(lams.shape[0])
        for ci, cls in enumerate(self.model.classes()):
            P = self.pair_laws(lams, cls)
            q = P @ cls.noise.matrix
            if self.fixed_pxy is not None:
                p = np.broadcast_to(self.fixed_pxy[ci], q.shape)
            else:
                p = P.sum(axis=2)[:, :, None] * cls.noise.matrix[None, :, :]
            with np.errstate(divide="ignore", invalid="ignore"):
                terms = rel_entr(p, q)
            total += cls.alpha * terms.reshape(lams.shape[0], -1).sum(axis=1) / LN2
        return np.maximum(total, 0.0)

    def denominator(self, lams: np.ndarray) -> np.ndarray:
        lams = np.atleast_2d(lams)
        G = lams.shape[0]
        H_lam = entr(lams).sum(axis=1) / LN2
        if self.variant in ("theorem1", "nonbinary"):
            return H_lam - _H(self.gamma_i)
        if self.variant in ("map_prior", "heterogeneous"):
            gj = lams.reshape(G, self.V, self.V).sum(axis=1)
            kl_prior = np.where(gj > 0, rel_entr(gj, self.prior[None, :]), 0.0).sum(axis=1) / LN2
            return H_lam - entr(gj).sum(axis=1) / LN2 - kl_prior
        if self.variant == "theorem2":
            parent = self.parent_marginals(lams)
            return (H_lam - entr(parent).sum(axis=1) / LN2) - self.gamma_conditional_entropy
        u = self.j_symbol(lams)
        return entr(u).sum(axis=1) / LN2

    def i_marginal(self, lams: np.ndarray) -> np.ndarray:
        return np.atleast_2d(lams).reshape(-1, self.N, self.N).sum(axis=2)

    def j_symbol(self, lams: np.ndarray) -> np.ndarray:
        lams = np.atleast_2d(lams)
        out = np.zeros((lams.shape[0], self.V))
        for b in range(self.V):
            out[:, b] = lams[:, self.b_sym == b].sum(axis=1)
        return out

    def i_symbol(self, lams: np.ndarray) -> np.ndarray:
        lams = np.atleast_2d(lams)
        out = np.zeros((lams.shape[0], self.V))
        for a in range(self.V):
            out[:, a] = lams[:, self.a_sym == a].sum(axis=1)
        return out

    def parent_marginals(self, lams: np.ndarray) -> np.ndarray:
        c, V = self.order, self.V
        t = np.atleast_2d(lams).reshape((-1,) + (V,) * (2 * c))
        return t.sum(axis=(c, 2 * c)).reshape(t.shape[0], -1)

    def distortion(self, lams: np.ndarray) -> np.ndarray:
        return np.atleast_2d(lams) @ self.offdiag_vector

    def violation(self, lam: np.ndarray) -> float:
        """Largest constraint violation of a single flat lambda (distortion excluded)."""
        worst = max(0.0, -float(lam.min()), abs(float(lam.sum()) - 1.0))
        if self.gamma_i is not None:
            worst = max(worst, float(np.max(np.abs(self.i_marginal(lam)[0] - self.gamma_i))))
        else:
            worst = max(worst, float(np.max(np.abs(self.i_symbol(lam)[0] - 1.0 / self.V))))
        if self.shift:
            jt = JointType(self.order, self.V, np.clip(lam, 0, None) / np.clip(lam, 0, None).sum(),
                           circular=False)
            worst = max(worst, shift_inconsistency(jt))
        return worst

    @property
    def gamma_conditional_entropy(self) -> float:
        g = TypeHistogram(self.order, self.V, self.gamma_i)
        return conditional_entropy(g)

    # -- linear maps for the convex solver --------------------------------

    def equality_system(self):
        """Independent rows (A, b) of all equality constraints, including sum(lambda) = 1."""
        n, N, V = self.n_vars, self.N, self.V
        rows = [np.ones((1, n))]
        rhs = [np.ones(1)]
        if self.gamma_i is not None:
            A = np.zeros((N, n))
            A[np.arange(n) // N, np.arange(n)] = 1.0
            rows.append(A)
            rhs.append(self.gamma_i)
        else:
            A = np.zeros((V, n))
            A[self.a_sym, np.arange(n)] = 1.0
            rows.append(A)
            rhs.append(np.full(V, 1.0 / V))
        if self.shift:
            c = self.order
            Np = V ** (c - 1)
            a_idx, b_idx = np.divmod(np.arange(n), N)
            left = (a_idx // V) * Np + (b_idx // V)
            right = (a_idx % Np) * Np + (b_idx % Np)
            S = np.zeros((Np * Np, n))
            np.add.at(S, (left, np.arange(n)), 1.0)
            np.add.at(S, (right, np.arange(n)), -1.0)
            rows.append(S)
            rhs.append(np.zeros(Np * Np))
        A = np.vstack(rows)
        b = np.concatenate(rhs)
        # drop linearly dependent rows (the marginal and shift systems are rank deficient)
        _, R, piv = scipy.linalg.qr(A.T, mode="economic", pivoting=True)
        diag = np.abs(np.diag(R))
        rank = int(np.sum(diag > 1e-9 * max(diag[0], 1.0)))
        keep = np.sort(piv[:rank])
        return sp.csr_matrix(A[keep]), b[keep]

    def _linear_pair_map(self, cls) -> np.ndarray:
        """Dense (m*m, n_vars) matrix L with P^lambda(x_i, x_j) = (L @ lambda)."""
        eye = np.eye(self.n_vars)
        P = self.pair_laws(eye, cls)
        return P.reshape(self.n_vars, -1).T

    def divergence_terms(self):
        if self.variant in GRID_VARIANTS:
            raise DimensionTooLarge("grid variants have no convex formulation here")
        terms = []
        for ci, cls in enumerate(self.model.classes()):
            W = cls.noise.matrix
            m, my = W.shape
            L = self._linear_pair_map(cls).reshape(m, m, self.n_vars)
            B = np.einsum("ijn,jy->iyn", L, W).reshape(m * my, self.n_vars)
            if self.fixed_pxy is not None:
                terms.append({"alpha": cls.alpha, "p": self.fixed_pxy[ci].ravel(), "P": None,
                              "B": sp.csr_matrix(B)})
            else:
                Pm = np.einsum("ijn,iy->iyn", L, W).reshape(m * my, self.n_vars)
                terms.append({"alpha": cls.alpha, "p": None, "P": sp.csr_matrix(Pm),
                              "B": sp.csr_matrix(B)})
        return terms

    @property
    def parent_map(self):
        """Sparse M with (M lambda)[i] = lambda'(parent of pattern pair i)."""
        n, N, V = self.n_vars, self.N, self.V
        a_idx, b_idx = np.divmod(np.arange(n), N)
        parent = (a_idx // V) * (N // V) + (b_idx // V)
        onehot = sp.csr_matrix((np.ones(n), (parent, np.arange(n))), shape=(parent.max() + 1, n))
        return (onehot.T @ onehot).tocsr()

    @property
    def j_symbol_map(self):
        n = self.n_vars
        return sp.csr_matrix((np.ones(n), (self.b_sym, np.arange(n))), shape=(self.V, n))

    def analytic_center(self) -> np.ndarray:
        if self.gamma_i is not None:
            return np.outer(self.gamma_i, np.full(self.N, 1.0 / self.N)).ravel()
        return np.full(self.n_vars, 1.0 / self.n_vars)

    def joint_type(self, lam: np.ndarray) -> JointType:
        return JointType(self.order, self.V, lam, circular=self.shift or self.order == 1,
                         stencil=self.stencil, tol=1e-6)


def _H(p) -> float:
    return float(entr(np.asarray(p, float)).sum() / LN2)


# ---------------------------------------------------------------------------
# objective


def objective_parts(problem: BoundProblem, lam: JointType):
    """(numerator, denominator) of the bound ratio at lambda; raises if infeasible."""
    geo = Geometry(problem)
    flat = _flat_lambda(geo, lam)
    viol = geo.violation(flat)
    if viol > FEASIBILITY_TOL:
        raise InfeasibleLambda(f"lambda violates the {problem.variant} constraints by {viol:.3g}",
                               field="lambda")
    if geo.distortion(flat)[0] < problem.D - FEASIBILITY_TOL:
        raise InfeasibleLambda(f"lambda has distortion below D={problem.D}", field="lambda")
    return float(geo.numerator(flat)[0]), float(geo.denominator(flat)[0])


def objective_ratio(problem: BoundProblem, lam: JointType) -> float:
    """KL numerator over the variant's entropy gap; INFINITE where the gap vanishes."""
    num, den = objective_parts(problem, lam)
    if den <= DENOMINATOR_EPS:
        return INFINITE
    return num / den


def inner_objective(problem: BoundProblem, lam, R: float) -> float:
    """f(lambda) = KL - R * gap, the convex function minimized inside clb_bisect."""
    geo = Geometry(problem)
    flat = _flat_lambda(geo, lam)
    return float(geo.numerator(flat)[0] - R * geo.denominator(flat)[0])


def _flat_lambda(geo: Geometry, lam) -> np.ndarray:
    if isinstance(lam, JointType):
        if lam.order != geo.order or lam.alphabet_size != geo.V:
            raise InfeasibleLambda(
                f"lambda has order {lam.order}, problem needs {geo.order}", field="lambda")
        return lam.probs
    flat = np.asarray(lam, float).ravel()
    if flat.size != geo.n_vars:
        raise InfeasibleLambda("lambda has the wrong size", field="lambda")
    return flat


# ---------------------------------------------------------------------------
# grid minimization (arbitrary-connection variants)


class _RowSimplexGrid:
    """lambda = diag(gamma_i) K with each row of K on a simplex; free coords are K[:, :-1]."""

    def __init__(self, geo: Geometry):
        self.geo = geo
        self.V = geo.V
        self.dim = self.V * (self.V - 1)

    def to_lambda(self, free: np.ndarray) -> np.ndarray:
        V = self.V
        free = free.reshape(-1, V, V - 1)
        last = 1.0 - free.sum(axis=2, keepdims=True)
        K = np.concatenate([free, last], axis=2)
        return (self.geo.gamma_i[None, :, None] * K).reshape(-1, V * V)

    def valid(self, free: np.ndarray) -> np.ndarray:
        f = free.reshape(-1, self.V, self.V - 1)
        return np.all(f >= -1e-15, axis=(1, 2)) & np.all(f.sum(axis=2) <= 1 + 1e-15, axis=1)

    def full_grid(self, r: int) -> np.ndarray:
        V = self.V
        row = np.array([comp[:-1] for comp in _compositions(r, V)], dtype=float) / r
        combos = itertools.product(range(row.shape[0]), repeat=V)
        return np.array([np.concatenate([row[i] for i in combo]) for combo in combos])

    def boundary_points(self, free: np.ndarray, D: float) -> np.ndarray:
        """Binary alphabet: for each grid coordinate, the point on distortion == D.

        Free coordinates are (K00, K10), so distortion = g0 (1 - K00) + g1 K10.
        """
        if self.V != 2:
            return np.empty((0, self.dim))
        g0, g1 = self.geo.gamma_i
        s = np.unique(free[:, 0])
        t = np.unique(free[:, 1])
        pts = []
        if g1 > 0:
            pts.append(np.column_stack([s, (D - g0 * (1 - s)) / g1]))
        if g0 > 0:
            pts.append(np.column_stack([1 - (D - g1 * t) / g0, t]))
        pts = np.vstack(pts) if pts else np.empty((0, 2))
        keep = np.all((pts >= 0) & (pts <= 1), axis=1)
        return pts[keep]

    # Binary alphabet only: (T, f) coordinates, T = distortion, f = share of T in row 0.
    # A log-spaced T axis keeps the grid dense near the boundary T = D however small D is.

    def from_polar(self, log_t: np.ndarray, f: np.ndarray) -> np.ndarray:
        g0, g1 = self.geo.gamma_i
        T = np.exp(log_t)
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(g0 > 0, 1 - f * T / g0, 1.0)
            t = np.where(g1 > 0, (1 - f) * T / g1, 0.0)
        return np.column_stack([s, t])

    def to_polar(self, free: np.ndarray):
        g0, g1 = self.geo.gamma_i
        T = max(float(g0 * (1 - free[0]) + g1 * free[1]), 1e-300)
        return math.log(T), float(g0 * (1 - free[0]) / T)

    def polar_grid(self, D: float, r: int):
        lo = math.log(max(D, POLAR_FLOOR))
        log_t = np.linspace(lo, 0.0, r)
        f = np.linspace(0.0, 1.0, r + 1)
        lt, ff = np.meshgrid(log_t, f, indexing="ij")
        return self.from_polar(lt.ravel(), ff.ravel()), (-lo / max(r - 1, 1), 1.0 / r)

    def polar_local(self, center: np.ndarray, D: float, steps) -> np.ndarray:
        lt0, f0 = self.to_polar(center)
        levels = np.array([-2.0, -1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0])
        lo = math.log(max(D, POLAR_FLOOR))
        lt = np.unique(np.clip(lt0 + levels * steps[0], lo, 0.0))
        f = np.clip(f0 + levels * steps[1], 0.0, 1.0)
        a, b = np.meshgrid(lt, f, indexing="ij")
        return self.from_polar(a.ravel(), b.ravel())


def _compositions(total: int, parts: int):
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def _grid_resolution(V: int, options: SolverOptions) -> int:
    if V == 2:
        r = options.grid_points
        if (r + 1) ** 2 > MAX_GRID:
            raise DimensionTooLarge(f"grid of {(r + 1) ** 2} points exceeds {MAX_GRID}")
        return r
    r = 1
    while r < options.grid_points and math.comb(r + V, V - 1) ** V <= options.max_grid:
        r += 1
    if math.comb(r + V - 1, V - 1) ** V > MAX_GRID or r < 2:
        raise DimensionTooLarge(f"|V|={V} grid exceeds {MAX_GRID} points")
    return r


def _minimize_on_grid(geo: Geometry, D: float, options: SolverOptions, score):
    """Generic grid + local refinement; ``score(lams) -> values`` (lower is better)."""
    grid = _RowSimplexGrid(geo)
    r = _grid_resolution(geo.V, options)
    free = grid.full_grid(r)
    free = np.vstack([free, grid.boundary_points(free, D)])
    best_val, best_free, evals = _score_batch(grid, geo, free, D, score)
    if best_free is None:
        raise InfeasibleLambda(f"no grid point reaches distortion {D}", field="D")
    polar_steps = None
    if geo.V == 2:
        pts, polar_steps = grid.polar_grid(D, r)
        val, cand, n = _score_batch(grid, geo, pts, D, score)
        evals += n
        if cand is not None and val < best_val:
            best_val, best_free = val, cand
    h = 1.0 / r
    gap = float("nan")
    for _ in range(options.refinements):
        local = _local_grid(best_free, h, grid.dim, options.max_grid)
        local = np.vstack([local, grid.boundary_points(local, D)])
        if polar_steps is not None:
            local = np.vstack([local, grid.polar_local(best_free, D, polar_steps)])
            polar_steps = (polar_steps[0] / 2, polar_steps[1] / 2)
        val, cand, n = _score_batch(grid, geo, local, D, score)
        evals += n
        if cand is not None and val <= best_val:
            best_val, best_free = val, cand
        h /= 2
    # Lipschitz gap: spread of the score over the final cell around the optimum
    nbrs = _local_grid(best_free, h, grid.dim, options.max_grid, levels=(-1.0, 0.0, 1.0))
    nvals = _scores(grid, geo, nbrs, D, score)
    finite = nvals[np.isfinite(nvals)]
    if finite.size and np.isfinite(best_val):
        gap = float(finite.max() - best_val)
    lam = grid.to_lambda(best_free)[0]
    return best_val, lam, {"method": "grid", "resolution": r, "refinements": options.refinements,
                           "cell": h, "evaluations": evals, "lipschitz_gap": gap}


def _local_grid(center: np.ndarray, h: float, dim: int, budget: int,
                levels=(-2.0, -1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0)) -> np.ndarray:
    while len(levels) ** dim > budget and len(levels) > 3:
        levels = levels[::2] if len(levels) > 5 else (-1.0, 0.0, 1.0)
    offsets = np.array(list(itertools.product(levels, repeat=dim))) * h
    return center[None, :] + offsets


def _scores(grid, geo, free, D, score) -> np.ndarray:
    out = np.full(free.shape[0], np.inf)
    ok = grid.valid(free)
    if not ok.any():
        return out
    idx = np.flatnonzero(ok)
    lams = np.clip(grid.to_lambda(np.clip(free[idx], 0.0, 1.0)), 0.0, None)
    feasible = geo.distortion(lams) >= D - 1e-15
    vals = np.full(idx.size, np.inf)
    chunk = 4096
    fidx = np.flatnonzero(feasible)
    for s in range(0, fidx.size, chunk):
        part = fidx[s:s + chunk]
        vals[part] = score(lams[part])
    out[idx] = vals
    return out


def _score_batch(grid, geo, free, D, score):
    vals = _scores(grid, geo, free, D, score)
    if not np.isfinite(vals).any():
        return np.inf, None, free.shape[0]
    # deterministic tie-break: first minimum in serialized pattern order
    i = int(np.argmin(vals))
    return float(vals[i]), np.clip(free[i], 0.0, 1.0), free.shape[0]


def _ratio_batch(geo: Geometry):
    def score(lams):
        num = geo.numerator(lams)
        den = geo.denominator(lams)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(den > DENOMINATOR_EPS, num / den, np.inf)
    return score


def clb_grid(problem: BoundProblem) -> BoundResult:
    """Bound by sampling the free coordinates of lambda, then refining locally."""
    if problem.variant not in GRID_VARIANTS:
        raise DimensionTooLarge(f"variant {problem.variant} is not grid-searchable; use clb_bisect")
    geo = Geometry(problem)
    value, lam, diag = _minimize_on_grid(geo, problem.D, problem.options, _ratio_batch(geo))
    num = float(geo.numerator(lam)[0])
    den = float(geo.denominator(lam)[0])
    diag["iterations"] = diag["evaluations"]
    if not np.isfinite(value):
        value = INFINITE
    return BoundResult(float(value), problem.D, problem.variant, geo.joint_type(lam), num, den, diag)


# ---------------------------------------------------------------------------
# bisection over the convex inner problem (contiguous and 2D variants)


def rate_ceiling(problem: BoundProblem) -> float:
    """c log|V|: no rate can exceed a sensor's raw c-symbol view."""
    model = problem.model
    return max(cls.psi.arity for cls in model.classes()) * math.log2(model.alphabet_size)


def clb_bisect(problem: BoundProblem) -> BoundResult:
    """Largest R for which min_lambda KL - R * gap stays nonnegative."""
    from .inner import InnerProblem

    if problem.variant not in CONVEX_VARIANTS:
        raise ConfigError(f"clb_bisect handles {CONVEX_VARIANTS}, not {problem.variant}",
                          field="variant")
    opts = problem.options
    geo = Geometry(problem)
    inner = InnerProblem(geo, problem.D)
    max_distortion = inner.check_feasible()

    lo, hi = 0.0, rate_ceiling(problem)
    history = []
    best_lam, best_ratio = None, INFINITE

    def probe(rate):
        nonlocal best_lam, best_ratio
        fval, lam, info = inner.solve(rate)
        num = float(geo.numerator(lam)[0])
        den = float(geo.denominator(lam)[0])
        history.append({"R": rate, "f": fval, **info})
        if den > DENOMINATOR_EPS and num / den < best_ratio:
            best_ratio, best_lam = num / den, lam
        return fval, lam, num, den

    f0, lam0, _, _ = probe(lo)
    if f0 < -max(opts.inner_tol, 1e-7):
        raise InnerSolverDiverged("inner minimum of KL is negative", {"f": f0})
    if best_lam is None:
        best_lam = lam0
    saturated = False
    fhi, _, _, _ = probe(hi)
    if fhi >= -opts.inner_tol:
        saturated = True
        lo = hi
    else:
        hi = min(hi, best_ratio)
    steps = 0
    while hi - lo > opts.bisection_tol and steps < opts.max_iters:
        mid = 0.5 * (lo + hi)
        fmid, _, _, _ = probe(mid)
        if fmid < -opts.inner_tol:
            hi = min(mid, best_ratio)
        else:
            lo = mid
        steps += 1
    clb = 0.5 * (lo + hi)
    lam = best_lam if best_lam is not None else lam0
    num = float(geo.numerator(lam)[0])
    den = float(geo.denominator(lam)[0])
    diag = {
        "method": "bisection",
        "bracket": [lo, hi],
        "iterations": steps,
        "inner_solves": len(history),
        "inner_iterations": [h["iterations"] for h in history],
        "solver": history[-1]["solver"] if history else None,
        "max_distortion": max_distortion,
        "constraint_violation": geo.violation(lam),
        "shift_consistency": geo.shift,
        "saturated": saturated,
    }
    return BoundResult(float(clb), problem.D, problem.variant, geo.joint_type(lam), num, den, diag)


def compute_bound(problem: BoundProblem) -> BoundResult:
    if problem.variant in GRID_VARIANTS:
        return clb_grid(problem)
    return clb_bisect(problem)


# ---------------------------------------------------------------------------
# error exponents


def _exponent_batch(p_gamma: np.ndarray, p_lam: np.ndarray, W: np.ndarray,
                    rhos: np.ndarray) -> np.ndarray:
    """E(rho, lambda) in bits for (G, m) input laws, (G, m, m) pair laws and K rhos -> (G, K)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = np.where(p_gamma[:, :, None] > 0, p_lam / p_gamma[:, :, None], 0.0)
    out = np.empty((p_lam.shape[0], rhos.size))
    for k, rho in enumerate(rhos):
        Ws = W ** (1.0 / (1.0 + rho))
        inner = np.einsum("gij,jb->gib", cond, Ws)
        S = np.einsum("gi,ib,gib->g", p_gamma, Ws, np.power(inner, rho))
        out[:, k] = -np.log2(S)
    return out


def error_exponent(model: ModelSpec, rho: float, gamma: TypeHistogram, lam: JointType) -> float:
    """Gallager-style pair exponent E(rho, lambda), alpha-weighted over sensor classes."""
    if not 0.0 <= rho <= 1.0:
        raise ConfigError("rho must lie in [0, 1]", field="rho")
    gi, _ = type_marginals(lam)
    order = lam.order if model.discipline != "arbitrary" else 1
    total = 0.0
    for cls in model.classes():
        pg = output_dist_batch(model, gamma.probs[None, :], cls.psi, order)
        pl = joint_output_dist_batch(model, lam.probs[None, :], cls.psi, order)
        if np.any((pg[0] > 1e-15) & (pl[0].sum(axis=1) <= 0)):
            raise ConditionalUndefined("P^lambda(a_i) = 0 where P^gamma(a_i) > 0", field="lambda")
        total += cls.alpha * _exponent_batch(pg, pl, cls.noise.matrix, np.array([rho]))[0, 0]
    return float(total)


def _phi_batch(geo: Geometry, lams: np.ndarray, R: float, rhos: np.ndarray):
    """max over the rho grid of E(rho, lambda) - rho R gap(lambda); returns (values, argmax rho)."""
    G = lams.shape[0]
    E = np.zeros((G, rhos.size))
    for cls in geo.model.classes():
        pl = geo.pair_laws(lams, cls)
        pg = pl.sum(axis=2)
        E += cls.alpha * _exponent_batch(pg, pl, cls.noise.matrix, rhos)
    den = geo.denominator(lams)
    g = E - R * rhos[None, :] * den[:, None]
    k = np.argmax(g, axis=1)
    return g[np.arange(G), k], rhos[k]


def _refine_rho(geo: Geometry, lam: np.ndarray, R: float, rhos: np.ndarray):
    """Bounded Brent/golden refinement of the best rho for one lambda."""
    def neg(rho):
        return -_phi_batch(geo, lam[None, :], R, np.array([rho]))[0][0]
    grid_vals = np.array([-neg(r) for r in rhos])
    k = int(np.argmax(grid_vals))
    lo = rhos[max(k - 1, 0)]
    hi = rhos[min(k + 1, rhos.size - 1)]
    best_rho, best_val = float(rhos[k]), float(grid_vals[k])
    if hi > lo:
        res = minimize_scalar(neg, bounds=(lo, hi), method="bounded", options={"xatol": 1e-7})
        if -res.fun > best_val:
            best_rho, best_val = float(res.x), float(-res.fun)
    return best_rho, best_val


def random_coding_exponent(model: ModelSpec, R: float, D: float, variant: Optional[str] = None,
                           options: Optional[SolverOptions] = None) -> ExponentResult:
    """E_r(R, D) = min over admissible lambda of max_rho E(rho, lambda) - rho R gap(lambda).

    Positive E_r certifies that rate R is achievable at distortion D.  Defined
    for the arbitrary-connection variants, whose lambda set is grid-searchable.
    """
    options = options or SolverOptions()
    problem = BoundProblem(model, D, variant, options)
    if problem.variant not in GRID_VARIANTS:
        raise ConfigError(f"the error exponent is defined for {GRID_VARIANTS}, "
                          f"not {problem.variant}", field="variant")
    if R < 0:
        raise ConfigError("rate must be nonnegative", field="R")
    geo = Geometry(problem)
    rhos = np.linspace(0.0, 1.0, options.rho_points)

    def score(lams):
        # among lambda with phi = 0 on the rho grid, prefer the steepest descent at rho = 0
        slope = geo.numerator(lams) - R * geo.denominator(lams)
        return _phi_batch(geo, lams, R, rhos)[0] + 1e-9 * np.minimum(slope, 0.0)

    _, lam, _ = _minimize_on_grid(geo, D, options, score)
    rho, er = _refine_rho(geo, lam, R, rhos)
    er = max(er, 0.0)
    E_val = float(_phi_batch(geo, lam[None, :], 0.0, np.array([rho]))[0][0])
    return ExponentResult(rho, E_val, er, geo.gamma_i, geo.joint_type(lam), R, D)


# ---------------------------------------------------------------------------
# sweeps and replication


@dataclass(eq=False)
class SweepTable:
    axis: str
    values: list
    results: list
    flags: dict = field(default_factory=dict)
    label: str = ""

    def rows(self):
        for value, res in zip(self.values, self.results):
            yield {
                "axis": self.axis,
                "value": value,
                "clb": res.clb,
                "numerator": res.numerator,
                "denominator": res.denominator,
                "iters": res.diagnostics.get("iterations", -1),
            }


def _monotone(seq, increasing: bool, tol: float) -> bool:
    diffs = np.diff(np.asarray(seq, float))
    return bool(np.all(diffs >= -tol) if increasing else np.all(diffs <= tol))


def sweep(problem: BoundProblem, axis: str, values) -> SweepTable:
    """One bound per grid value along D, noise_p, c, or rate (exponent sweep)."""
    values = [float(v) if axis != "c" else int(v) for v in values]
    if not values:
        raise ConfigError("sweep grid is empty", field="axis")
    results = []
    if axis == "D":
        for v in values:
            results.append(compute_bound(problem.with_D(v)))
    elif axis == "noise_p":
        for v in values:
            results.append(compute_bound(problem.with_model(problem.model.with_noise_p(v))))
    elif axis == "c":
        for v in values:
            results.append(compute_bound(problem.with_model(_with_range(problem.model, v))))
    elif axis == "rate":
        base = compute_bound(problem)
        for v in values:
            ex = random_coding_exponent(problem.model, v, problem.D, problem.variant,
                                        problem.options)
            diag = dict(base.diagnostics)
            diag.update({"R": v, "Er": ex.Er_value, "rho": ex.rho, "achievable": ex.achievable()})
            results.append(BoundResult(base.clb, problem.D, problem.variant, base.lambda_star,
                                       base.numerator, base.denominator, diag))
    else:
        raise ConfigError(f"unknown sweep axis {axis!r}", field="axis")
    tol = problem.options.bisection_tol + 1e-9
    clbs = [r.clb for r in results]
    flags = {}
    if axis == "D":
        order = np.argsort(values)
        flags["nondecreasing_in_D"] = _monotone([clbs[i] for i in order], True, tol)
    elif axis == "noise_p":
        order = np.argsort(values)
        flags["nonincreasing_in_p"] = _monotone([clbs[i] for i in order], False, tol)
    return SweepTable(axis, values, results, flags)


def _with_range(model: ModelSpec, c: int) -> ModelSpec:
    if model.psi.kind != "sum" or model.mixture:
        raise ConfigError("range sweeps need a single-class sum sensor", field="psi")
    desc = model.noise.description
    if desc.get("kind") != "exponential":
        raise ConfigError("range sweeps need exponential noise", field="noise")
    return simple_model(c, desc["p"], model.discipline, decay=desc["decay"],
                        alphabet_size=model.alphabet_size, prior=model.prior)


def majority_error(p: float, m: int) -> float:
    """Error probability of a majority vote over m independent copies with error p."""
    if m < 1 or m % 2 == 0:
        raise EvenReplication(f"replication factor must be odd, got {m}", field="m")
    if not 0.0 <= p <= 1.0:
        raise InvalidProbability("p must lie in [0, 1]", field="p")
    return sum(math.comb(m, j) * p ** j * (1 - p) ** (m - j) for j in range(m // 2 + 1, m + 1))


@dataclass(frozen=True)
class ReplicationResult:
    p: float
    p_eff: float
    m: int
    rate_replicated: float
    rate_direct: float
    clb_replicated_sensor: float


def replication_comparison(model: ModelSpec, D: float, m: int,
                           options: Optional[SolverOptions] = None) -> ReplicationResult:
    """Rate from m-fold replication with majority voting vs. using the raw sensors."""
    options = options or SolverOptions()
    desc = model.noise.description
    if desc.get("kind") != "exponential":
        raise ConfigError("replication needs an exponential noise model", field="noise")
    p = desc["p"]
    p_eff = majority_error(p, m)
    direct = compute_bound(BoundProblem(model, D, options=options))
    if m == 1:
        return ReplicationResult(p, p_eff, m, direct.clb, direct.clb, direct.clb)
    replicated = compute_bound(BoundProblem(model.with_noise_p(p_eff), D, options=options))
    return ReplicationResult(p, p_eff, m, replicated.clb / m, direct.clb, replicated.clb)


def with_decay(model: ModelSpec, decay: float) -> ModelSpec:
    """Same model with the exponential-noise decay base replaced."""
    desc = model.noise.description
    return replace(model, noise=make_exponential_noise(desc["p"], model.psi.n_outputs, decay))


__all__ = [
    "BoundProblem", "BoundResult", "ExponentResult", "SolverOptions", "SweepTable",
    "ReplicationResult", "Geometry", "clb_grid", "clb_bisect", "compute_bound",
    "objective_ratio", "objective_parts", "inner_objective", "error_exponent",
    "random_coding_exponent", "sweep", "replication_comparison", "majority_error",
    "default_variant", "symbol_marginal",
]
