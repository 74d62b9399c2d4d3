"""Affine LMI carrier, PSD utilities and the SDP backend contract.

The carrier keeps every constraint as constant + sum_i x_i * coeff_i >= slack*I
with scalar decision variables, so backends can be swapped without touching
the synthesis code.  One interior-point adapter (cvxpy / Clarabel) ships in
tree, plus a brute-force grid backend for 1-d cross-checks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

DEFAULT_FEAS_TOL = 1e-8
DEFAULT_MAX_ITER = 200000


def scale_tol(M, tol=1e-9):
    """Scale-relative definiteness tolerance tol * (1 + ||M||_2)."""
    return tol * (1.0 + np.linalg.norm(M, 2))


def definiteness(M, tol=1e-9) -> str:
    """Classify a symmetric matrix as posdef/psd/indef/negdef/nsd."""
    M = np.asarray(M, dtype=float)
    t = scale_tol(M, tol)
    w = np.linalg.eigvalsh(0.5 * (M + M.T))
    lo, hi = w[0], w[-1]
    if lo > t:
        return "posdef"
    if hi < -t:
        return "negdef"
    if lo >= -t and hi >= -t:
        return "psd"
    if hi <= t:
        return "nsd"
    return "indef"


def psd_factor(M, tol=1e-9):
    """Factor a PSD matrix as U D U^T with orthonormal U columns and
    positive diagonal D, dropping eigenvalues below the relative tolerance.

    Returns (U, D) where U is d x r and D is r x r diagonal.
    """
    M = np.asarray(M, dtype=float)
    M = 0.5 * (M + M.T)
    t = scale_tol(M, tol)
    w, V = np.linalg.eigh(M)
    if w[0] < -t:
        neg = [float(x) for x in w[w < -t]]
        raise ValueError(f"matrix is indefinite; negative eigenvalues {neg}")
    keep = w > t
    U = V[:, keep]
    D = np.diag(w[keep])
    return U, D


@dataclass(frozen=True)
class AffineLmi:
    """constant + sum_i x_{var_id_i} * coeff_i >= 0 (PSD cone)."""

    constant: np.ndarray
    coeffs: tuple  # of (var_id, symmetric matrix)

    def __post_init__(self):
        C = np.asarray(self.constant, dtype=float)
        d = C.shape[0]
        if C.shape != (d, d):
            raise ValueError("constant block must be square")
        seen = set()
        coeffs = []
        for var_id, A in self.coeffs:
            A = np.asarray(A, dtype=float)
            if A.shape != (d, d):
                raise ValueError(f"coefficient for {var_id} has shape {A.shape},"
                                 f" expected {(d, d)}")
            if var_id in seen:
                raise ValueError(f"duplicate var_id {var_id} in LMI")
            seen.add(var_id)
            coeffs.append((var_id, 0.5 * (A + A.T)))
        object.__setattr__(self, "constant", 0.5 * (C + C.T))
        object.__setattr__(self, "coeffs", tuple(coeffs))

    @property
    def dim(self):
        return self.constant.shape[0]

    def evaluate(self, values: dict) -> np.ndarray:
        M = self.constant.copy()
        for var_id, A in self.coeffs:
            M = M + float(values[var_id]) * A
        return M


@dataclass(frozen=True)
class SdpProblem:
    """Scalar variables, PSD constraints, optional linear objective
    (minimized).  objective maps var_id -> coefficient."""

    variables: tuple  # of var_id strings
    constraints: tuple  # of AffineLmi
    objective: dict | None = None

    def __post_init__(self):
        declared = set(self.variables)
        if len(declared) != len(self.variables):
            raise ValueError("duplicate variable declaration")
        for lmi in self.constraints:
            for var_id, _ in lmi.coeffs:
                if var_id not in declared:
                    raise ValueError(f"undeclared variable {var_id}")
        if self.objective:
            for var_id in self.objective:
                if var_id not in declared:
                    raise ValueError(f"undeclared objective variable {var_id}")

    def dump_json(self, path):
        doc = {
            "variables": list(self.variables),
            "objective": self.objective,
            "constraints": [
                {
                    "d": lmi.dim,
                    "constant": lmi.constant.tolist(),
                    "coeffs": [
                        {"var": v, "matrix": A.tolist()} for v, A in lmi.coeffs
                    ],
                }
                for lmi in self.constraints
            ],
        }
        with open(path, "w") as f:
            json.dump(doc, f)


@dataclass(frozen=True)
class SdpSolution:
    status: str  # optimal | infeasible | inaccurate | error
    values: dict = field(default_factory=dict)
    min_slack: float = -np.inf
    objective: float | None = None
    message: str = ""


def _recheck(problem: SdpProblem, values: dict) -> float:
    """Worst eigenvalue margin across all constraints (independent of the
    solver's own feasibility report)."""
    slack = np.inf
    for lmi in problem.constraints:
        M = lmi.evaluate(values)
        slack = min(slack, float(np.linalg.eigvalsh(0.5 * (M + M.T))[0]))
    return slack


class CvxpyBackend:
    """Interior-point adapter (Clarabel via cvxpy; SCS fallback)."""

    def __init__(self, solver=None):
        self.solver = solver

    def solve(self, problem: SdpProblem, feas_tol, max_iter) -> SdpSolution:
        import warnings

        import cvxpy as cp

        x = {v: cp.Variable(name=v) for v in problem.variables}
        cons = []
        for lmi in problem.constraints:
            expr = cp.Constant(lmi.constant)
            for var_id, A in lmi.coeffs:
                expr = expr + x[var_id] * cp.Constant(A)
            cons.append(expr >> 0)
        if problem.objective:
            obj = cp.Minimize(
                sum(c * x[v] for v, c in problem.objective.items()))
        else:
            obj = cp.Minimize(0)
        prob = cp.Problem(obj, cons)
        solver = self.solver or ("CLARABEL" if "CLARABEL" in
                                 cp.installed_solvers() else "SCS")

        def attempt(name):
            opts = ({"max_iter": min(max_iter, 500)} if name == "CLARABEL"
                    else {"max_iters": min(max_iter, 20000)})
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                prob.solve(solver=name, **opts)

        try:
            attempt(solver)
        except cp.error.SolverError as e:
            if solver != "SCS":
                try:
                    attempt("SCS")
                except cp.error.SolverError:
                    return SdpSolution(status="error", message=str(e))
            else:
                return SdpSolution(status="error", message=str(e))
        if prob.status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
            return SdpSolution(status="infeasible", message=prob.status)
        if prob.status in (cp.UNBOUNDED, cp.UNBOUNDED_INACCURATE):
            return SdpSolution(status="error",
                               message=f"objective unbounded ({prob.status})")
        if prob.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
            return SdpSolution(status="error", message=str(prob.status))
        values = {v: float(x[v].value) for v in problem.variables}
        slack = _recheck(problem, values)
        status = "optimal"
        if prob.status == cp.OPTIMAL_INACCURATE or slack < -feas_tol:
            status = "inaccurate"
        objective = float(prob.value) if problem.objective else None
        return SdpSolution(status=status, values=values, min_slack=slack,
                           objective=objective)


class GridBackend:
    """Brute-force backend for problems with a single scalar variable.

    Grids the variable over a symmetric range and picks the feasible point
    with the best objective (or largest slack).  Only meant as an
    independent cross-check of accept/reject decisions on tiny instances.
    """

    def __init__(self, lo=-1e3, hi=1e3, steps=200001):
        self.lo = lo
        self.hi = hi
        self.steps = steps

    def solve(self, problem: SdpProblem, feas_tol, max_iter) -> SdpSolution:
        if len(problem.variables) != 1:
            return SdpSolution(status="error",
                               message="grid backend handles exactly 1 variable")
        v = problem.variables[0]
        grid = np.linspace(self.lo, self.hi, self.steps)
        best = None
        for val in grid:
            values = {v: float(val)}
            slack = _recheck(problem, values)
            if slack < -feas_tol:
                continue
            score = (problem.objective.get(v, 0.0) * val
                     if problem.objective else -slack)
            if best is None or score < best[0]:
                best = (score, values, slack)
        if best is None:
            return SdpSolution(status="infeasible", message="grid exhausted")
        score, values, slack = best
        objective = score if problem.objective else None
        return SdpSolution(status="optimal", values=values, min_slack=slack,
                           objective=objective)


_default_backend = CvxpyBackend()


def solve_sdp(problem: SdpProblem, feas_tol=DEFAULT_FEAS_TOL,
              max_iter=DEFAULT_MAX_ITER, backend=None) -> SdpSolution:
    """Solve an SDP through the configured backend and independently
    re-check feasibility of the returned point."""
    backend = backend or _default_backend
    return backend.solve(problem, feas_tol=feas_tol, max_iter=max_iter)
