"""Convex inner problem of the ratio bound: min_lambda KL(lambda) - R * gap(lambda).

The objective is DCP-representable: the divergence is a sum of ``-p log(B lam)``
(fixed p) or ``rel_entr(P lam, B lam)`` terms, and the conditional-entropy gap
is ``-sum rel_entr(lam, M lam)``, so the whole problem goes to an exponential-
cone interior-point solver.  ``R`` is a DPP parameter, so bisection re-solves
without recompiling.
"""

from __future__ import annotations

import math

import cvxpy as cp
import numpy as np

from .errors import EmptyFeasibleSet, InnerSolverDiverged

LN2 = math.log(2)
# interior point first; shorter steps and extra refinement rescue the occasional stall
ATTEMPTS = (
    ("CLARABEL", {}),
    ("CLARABEL", {"max_step_fraction": 0.9}),
    ("CLARABEL", {"max_step_fraction": 0.8, "iterative_refinement_max_iter": 50}),
    ("SCS", {"eps": 1e-8}),
)


class InnerProblem:
    """Compiled cvxpy model for one bound problem.

    ``geometry`` (see ``bounds.Geometry``) supplies the linear maps from the
    flattened joint type to everything the objective needs.
    """

    def __init__(self, geometry, D: float):
        g = geometry
        self.geometry = g
        self.D = D
        self.lam = cp.Variable(g.n_vars, nonneg=True)
        self.rate = cp.Parameter(nonneg=True)
        lam = self.lam

        A, b = g.equality_system()
        base = [A @ lam == b]
        distortion = g.offdiag_vector @ lam
        self.problem_constraints = base + [distortion >= D]

        terms = []
        for term in g.divergence_terms():
            if term["p"] is not None:
                p = term["p"]
                mask = p > 0
                const = float(np.sum(p[mask] * np.log(p[mask])))
                expr = const - p[mask] @ cp.log(term["B"][mask] @ lam)
            else:
                expr = cp.sum(cp.rel_entr(term["P"] @ lam, term["B"] @ lam))
            terms.append(term["alpha"] * expr / LN2)
        divergence = terms[0] if len(terms) == 1 else cp.sum(cp.hstack(terms))

        if g.variant == "twod":
            gap = cp.sum(cp.entr(g.j_symbol_map @ lam)) / LN2
            objective = divergence - self.rate * gap
        else:
            # f = KL - R (H(lam~|lam') - H(gam~|gam'));  -H(lam~|lam') = sum rel_entr(lam, M lam)
            neg_cond = cp.sum(cp.rel_entr(lam, g.parent_map @ lam)) / LN2
            objective = divergence + self.rate * (neg_cond + g.gamma_conditional_entropy)
        self.problem = cp.Problem(cp.Minimize(objective), self.problem_constraints)
        self.feasibility = cp.Problem(cp.Maximize(distortion), base)

    def check_feasible(self) -> float:
        """Largest achievable distortion; raises EmptyFeasibleSet when it is below D."""
        try:
            self.feasibility.solve(solver="CLARABEL")
        except cp.error.SolverError:
            self.feasibility.solve(solver="SCS")
        best = self.feasibility.value
        if self.feasibility.status not in ("optimal", "optimal_inaccurate") or best is None:
            raise EmptyFeasibleSet("joint-type constraints are infeasible", field="D")
        if best < self.D - 1e-9:
            raise EmptyFeasibleSet(
                f"no admissible joint type reaches distortion {self.D} (max {best:.6g})",
                field="D")
        return float(best)

    def solve(self, rate: float):
        """Minimize f at the given rate; returns (f*, lambda*, diagnostics)."""
        self.rate.value = float(rate)
        last = None
        for solver, settings in ATTEMPTS:
            try:
                self.problem.solve(solver=solver, **settings)
            except cp.error.SolverError as exc:
                last = str(exc)
                continue
            status = self.problem.status
            if status in ("optimal", "optimal_inaccurate") and self.lam.value is not None:
                lam = np.clip(self.lam.value, 0.0, None)
                lam /= lam.sum()
                stats = self.problem.solver_stats
                iters = int(stats.num_iters) if stats and stats.num_iters is not None else -1
                return float(self.problem.value), lam, {
                    "solver": solver, "status": status, "iterations": iters}
            last = status
        raise InnerSolverDiverged(f"inner solve failed at R={rate}: {last}",
                                  {"rate": float(rate), "status": last})
