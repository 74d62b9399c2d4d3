"""Dynamic output-feedback synthesis over all data-consistent systems.

The convexified condition is one large block matrix inequality that is
affine in the transformed controller variables once the scalar coupling
parameter alpha is fixed; synthesis is therefore a 1-d line search over
SDP solves, followed by an explicit controller reconstruction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import lmi
from .data import ConsistencySet
from .model import Controller, DimensionError, is_regular

# absolute: the assembled matrix contains inverse residual blocks whose
# norm blows up as the noise level shrinks, so a norm-relative margin
# would spuriously cut off feasible problems
STRICT_MARGIN = 1e-6
SLACK_ACCEPT = 1e-8
RECON_COND_LIMIT = 1e10


class SynthesisInfeasible(RuntimeError):
    """No alpha in the searched range admitted a feasible LMI."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class SupplyRate:
    """Quadratic performance specification (Q, S, R) with R PSD, together
    with a factor R = T Rtilde T^T of rank qtilde."""

    Q: np.ndarray
    S: np.ndarray
    R: np.ndarray
    T: np.ndarray
    Rtilde: np.ndarray
    qtilde: int

    @property
    def p(self):
        return self.Q.shape[0]

    @property
    def q(self):
        return self.R.shape[0]


def supply_factor(Q, S, R, tol=1e-9) -> SupplyRate:
    """Validate a supply rate and factor its PSD output-weight block."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    S = np.atleast_2d(np.asarray(S, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    p = Q.shape[0]
    q = R.shape[0]
    if Q.shape != (p, p) or R.shape != (q, q) or S.shape != (p, q):
        raise DimensionError("supply-rate blocks have inconsistent shapes")
    Q = 0.5 * (Q + Q.T)
    R = 0.5 * (R + R.T)
    if np.linalg.eigvalsh(R)[0] < -lmi.scale_tol(R, tol):
        raise ValueError("supply rate requires R to be positive semidefinite")
    T, Rt = lmi.psd_factor(R, tol)
    return SupplyRate(Q=Q, S=S, R=R, T=T, Rtilde=Rt, qtilde=T.shape[1])


def hinf_supply(gamma: float, p: int, q: int) -> SupplyRate:
    """H-infinity supply: Q = -gamma^2 I, S = 0, R = I."""
    return supply_factor(-gamma**2 * np.eye(p), np.zeros((p, q)), np.eye(q))


@dataclass(frozen=True)
class SynthesisIngredients:
    """Everything the synthesis LMI consumes: the consistency set, the
    supply rate, and the known plant channel matrices."""

    cs: ConsistencySet
    supply: SupplyRate
    B1: np.ndarray
    C1: np.ndarray
    D1: np.ndarray
    E: np.ndarray
    C: np.ndarray
    F: np.ndarray

    def __post_init__(self):
        n, m = self.cs.n, self.cs.m
        for name in ("B1", "C1", "D1", "E", "C", "F"):
            object.__setattr__(
                self, name,
                np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))
        p = self.B1.shape[1]
        q = self.C1.shape[0]
        l = self.C.shape[0]
        checks = {"B1": (n, p), "C1": (q, n), "D1": (q, p), "E": (q, m),
                  "C": (l, n), "F": (l, p)}
        for name, shape in checks.items():
            if getattr(self, name).shape != shape:
                raise DimensionError(
                    f"{name}: expected shape {shape}, "
                    f"got {getattr(self, name).shape}")
        if (self.supply.p, self.supply.q) != (p, q):
            raise DimensionError(
                f"supply rate sized (p={self.supply.p}, q={self.supply.q}) "
                f"does not match channels (p={p}, q={q})")
        if self.cs.As is None or self.cs.Xi is None:
            raise ValueError("consistency set incomplete; run nominal_system "
                             "and residual_factor first")

    @property
    def dims(self):
        n, m = self.cs.n, self.cs.m
        return (n, self.B1.shape[1], m, self.C1.shape[0], self.C.shape[0])


@dataclass(frozen=True)
class DecisionVars:
    """Transformed controller variables of the synthesis LMI."""

    X: np.ndarray
    Y: np.ndarray
    Atc: np.ndarray
    Btc: np.ndarray
    Ctc: np.ndarray
    Dc: np.ndarray
    alpha: float


@dataclass(frozen=True)
class SynthesisResult:
    vars: DecisionVars
    controller: Controller
    U_choice: np.ndarray
    slack: float
    performance: float | None = None
    trace: tuple = field(default_factory=tuple)


def pi_dimension(n, p, m, qtilde, ntilde):
    """Size of the assembled synthesis LMI."""
    return (4 * n + p + qtilde) + (n + m + ntilde)


def _pi_matrix(ing: SynthesisIngredients, alpha, X, Y, Atc, Btc, Ctc, Dc,
               Q=None):
    """Evaluate the synthesis block matrix at concrete variable values.

    Affine in (X, Y, Atc, Btc, Ctc, Dc) and in Q for fixed alpha; the
    affine LMI carrier is extracted from this map by probing.
    """
    cs = ing.cs
    n, p, m, q, l = ing.dims
    qt = ing.supply.qtilde
    nt = cs.ntilde
    S = ing.supply.S
    if Q is None:
        Q = ing.supply.Q
    B1, C1, D1, E, C, F = ing.B1, ing.C1, ing.D1, ing.E, ing.C, ing.F
    As, Bs = cs.As, cs.Bs
    # rescaled factorizations (the factorization is free): absorbing the
    # diagonal weights into the factors turns the inverse-weight diagonal
    # blocks into identities, which conditions the LMI far better when the
    # residual eigenvalues are tiny
    Xi = (cs.Xi @ np.sqrt(Lam(cs)) if cs.ntilde else cs.Xi)
    T = ing.supply.T @ np.sqrt(ing.supply.Rtilde)
    P12, P13, P22, P23, P33 = (cs.PhiT12, cs.PhiT13, cs.PhiT22,
                               cs.PhiT23, cs.PhiT33)

    Zc = C1 + E @ Dc @ C          # q x n
    Zy = C1 @ Y + E @ Ctc         # q x n
    Zd = D1 + E @ Dc @ F          # q x p

    def he(M):
        return M + M.T

    # upper-left block: 2n + p + qt
    P11 = np.zeros((2 * n + p + qt, 2 * n + p + qt))
    r = np.cumsum([0, n, n, p, qt])
    P11[r[0]:r[1], r[0]:r[1]] = X
    P11[r[0]:r[1], r[1]:r[2]] = np.eye(n)
    P11[r[1]:r[2], r[0]:r[1]] = np.eye(n)
    P11[r[1]:r[2], r[1]:r[2]] = Y
    P11[r[2]:r[3], r[0]:r[1]] = -S @ Zc
    P11[r[0]:r[1], r[2]:r[3]] = (-S @ Zc).T
    P11[r[2]:r[3], r[1]:r[2]] = -S @ Zy
    P11[r[1]:r[2], r[2]:r[3]] = (-S @ Zy).T
    P11[r[2]:r[3], r[2]:r[3]] = -Q - he(S @ Zd)
    if qt > 0:
        P11[r[3]:r[4], r[0]:r[1]] = T.T @ Zc
        P11[r[0]:r[1], r[3]:r[4]] = (T.T @ Zc).T
        P11[r[3]:r[4], r[1]:r[2]] = T.T @ Zy
        P11[r[1]:r[2], r[3]:r[4]] = (T.T @ Zy).T
        P11[r[3]:r[4], r[2]:r[3]] = T.T @ Zd
        P11[r[2]:r[3], r[3]:r[4]] = (T.T @ Zd).T
        P11[r[3]:r[4], r[3]:r[4]] = np.eye(qt)

    # lower-right block: 3n + m + nt
    P22b = np.zeros((3 * n + m + nt, 3 * n + m + nt))
    c = np.cumsum([0, n, n, n, m, nt])
    G12 = -alpha * (P12 + As @ P22 + Bs @ P23.T)   # n x n
    G13 = -alpha * (P13 + As @ P23 + Bs @ P33)     # n x m
    P22b[c[0]:c[1], c[0]:c[1]] = Y
    P22b[c[0]:c[1], c[1]:c[2]] = np.eye(n)
    P22b[c[1]:c[2], c[0]:c[1]] = np.eye(n)
    P22b[c[1]:c[2], c[1]:c[2]] = X
    P22b[c[0]:c[1], c[2]:c[3]] = G12
    P22b[c[2]:c[3], c[0]:c[1]] = G12.T
    P22b[c[0]:c[1], c[3]:c[4]] = G13
    P22b[c[3]:c[4], c[0]:c[1]] = G13.T
    P22b[c[1]:c[2], c[2]:c[3]] = X @ G12
    P22b[c[2]:c[3], c[1]:c[2]] = (X @ G12).T
    P22b[c[1]:c[2], c[3]:c[4]] = X @ G13
    P22b[c[3]:c[4], c[1]:c[2]] = (X @ G13).T
    P22b[c[2]:c[3], c[2]:c[3]] = -alpha * P22
    P22b[c[2]:c[3], c[3]:c[4]] = -alpha * P23
    P22b[c[3]:c[4], c[2]:c[3]] = (-alpha * P23).T
    P22b[c[3]:c[4], c[3]:c[4]] = -alpha * P33
    if nt > 0:
        P22b[c[0]:c[1], c[4]:c[5]] = alpha * Xi
        P22b[c[4]:c[5], c[0]:c[1]] = (alpha * Xi).T
        P22b[c[1]:c[2], c[4]:c[5]] = alpha * X @ Xi
        P22b[c[4]:c[5], c[1]:c[2]] = (alpha * X @ Xi).T
        P22b[c[4]:c[5], c[4]:c[5]] = alpha * np.eye(nt)

    # coupling block: rows of P22b x cols of P11
    P21 = np.zeros((3 * n + m + nt, 2 * n + p + qt))
    P21[c[0]:c[1], r[0]:r[1]] = As + Bs @ Dc @ C
    P21[c[0]:c[1], r[1]:r[2]] = As @ Y + Bs @ Ctc
    P21[c[0]:c[1], r[2]:r[3]] = B1 + Bs @ Dc @ F
    P21[c[1]:c[2], r[0]:r[1]] = X @ As + Btc @ C
    P21[c[1]:c[2], r[1]:r[2]] = Atc
    P21[c[1]:c[2], r[2]:r[3]] = X @ B1 + Btc @ F
    P21[c[2]:c[3], r[0]:r[1]] = np.eye(n)
    P21[c[2]:c[3], r[1]:r[2]] = Y
    P21[c[3]:c[4], r[0]:r[1]] = Dc @ C
    P21[c[3]:c[4], r[1]:r[2]] = Ctc
    P21[c[3]:c[4], r[2]:r[3]] = Dc @ F

    Pi = np.block([[P11, P21.T], [P21, P22b]])
    return 0.5 * (Pi + Pi.T)


def Lam(cs: ConsistencySet):
    return np.asarray(cs.Lambda, dtype=float)


def _var_layout(n, m, l, minimize_gamma_sq):
    """Scalarization of the matrix decision variables: symmetric matrices
    by upper triangle, full matrices entry-wise."""
    layout = []
    for i in range(n):
        for j in range(i, n):
            layout.append(("X", i, j))
    for i in range(n):
        for j in range(i, n):
            layout.append(("Y", i, j))
    for i in range(n):
        for j in range(n):
            layout.append(("Atc", i, j))
    for i in range(n):
        for j in range(l):
            layout.append(("Btc", i, j))
    for i in range(m):
        for j in range(n):
            layout.append(("Ctc", i, j))
    for i in range(m):
        for j in range(l):
            layout.append(("Dc", i, j))
    if minimize_gamma_sq:
        layout.append(("gsq", 0, 0))
    return layout


def _vars_from_values(ing, values, alpha):
    n, _, m, _, l = ing.dims

    def mat(name, rows, cols, sym):
        M = np.zeros((rows, cols))
        for i in range(rows):
            for j in range(cols):
                if sym and j < i:
                    M[i, j] = values[f"{name}[{j},{i}]"]
                else:
                    M[i, j] = values[f"{name}[{i},{j}]"]
        return M

    return DecisionVars(
        X=mat("X", n, n, True), Y=mat("Y", n, n, True),
        Atc=mat("Atc", n, n, False), Btc=mat("Btc", n, l, False),
        Ctc=mat("Ctc", m, n, False), Dc=mat("Dc", m, l, False),
        alpha=float(alpha))


def assemble_pi(ing: SynthesisIngredients, alpha: float,
                objective: str = "none") -> lmi.SdpProblem:
    """Build the fixed-alpha synthesis LMI as an SDP.

    objective "none": feasibility with slack variable t, Pi >= t I,
    maximize t.  objective "minimize_gamma_sq": Q is replaced by -g I with
    scalar variable g minimized; Pi >= margin I with a fixed strictness
    margin.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if objective not in ("none", "minimize_gamma_sq"):
        raise ValueError(f"unknown objective {objective!r}")
    minimize_g = objective == "minimize_gamma_sq"
    n, p, m, q, l = ing.dims
    if minimize_g:
        if not (np.allclose(ing.supply.S, 0)
                and np.allclose(ing.supply.R, np.eye(q))):
            raise ValueError("gamma minimization requires an H-infinity "
                             "supply rate (S = 0, R = I)")

    layout = _var_layout(n, m, l, minimize_g)
    shapes = {"X": (n, n), "Y": (n, n), "Atc": (n, n), "Btc": (n, l),
              "Ctc": (m, n), "Dc": (m, l)}

    def build(values, gval):
        mats = {}
        for name, (rows, cols) in shapes.items():
            M = np.zeros((rows, cols))
            for (nm, i, j), v in values.items():
                if nm == name:
                    M[i, j] = v
                    if name in ("X", "Y") and i != j:
                        M[j, i] = v
            mats[name] = M
        Q = -gval * np.eye(p) if minimize_g else None
        return _pi_matrix(ing, alpha, mats["X"], mats["Y"], mats["Atc"],
                          mats["Btc"], mats["Ctc"], mats["Dc"], Q=Q)

    base = build({}, 0.0)
    d = base.shape[0]
    var_ids = []
    coeffs = []
    for key in layout:
        name, i, j = key
        var_id = f"{name}[{i},{j}]" if name != "gsq" else "gsq"
        var_ids.append(var_id)
        probe = build({key: 1.0} if name != "gsq" else {}, 1.0 if name == "gsq"
                      else 0.0)
        coeffs.append((var_id, probe - base))

    margin = STRICT_MARGIN
    if minimize_g:
        constraints = [lmi.AffineLmi(constant=base - margin * np.eye(d),
                                     coeffs=tuple(coeffs)),
                       lmi.AffineLmi(constant=np.zeros((1, 1)),
                                     coeffs=(("gsq", np.eye(1)),))]
        problem = lmi.SdpProblem(variables=tuple(var_ids),
                                 constraints=tuple(constraints),
                                 objective={"gsq": 1.0})
    else:
        var_ids.append("slack")
        coeffs.append(("slack", -np.eye(d)))
        constraints = [lmi.AffineLmi(constant=base, coeffs=tuple(coeffs))]
        problem = lmi.SdpProblem(variables=tuple(var_ids),
                                 constraints=tuple(constraints),
                                 objective={"slack": -1.0})
    return problem


def solve_fixed_alpha(ing: SynthesisIngredients, alpha: float,
                      objective: str = "none", feas_tol=lmi.DEFAULT_FEAS_TOL,
                      backend=None):
    """Solve the synthesis LMI at one alpha.

    Returns (vars, score) on feasibility, otherwise None.  score is the
    achieved slack in feasibility mode and gamma in minimization mode.
    """
    problem = assemble_pi(ing, alpha, objective)
    sol = lmi.solve_sdp(problem, feas_tol=feas_tol, backend=backend)
    if sol.status == "inaccurate":
        sol = lmi.solve_sdp(problem, feas_tol=feas_tol * 0.1, backend=backend)
    if sol.status not in ("optimal",):
        return None
    vars_ = _vars_from_values(ing, sol.values, alpha)
    if objective == "minimize_gamma_sq":
        g = max(float(sol.values["gsq"]), 0.0)
        Pi = _pi_matrix(ing, alpha, vars_.X, vars_.Y, vars_.Atc, vars_.Btc,
                        vars_.Ctc, vars_.Dc,
                        Q=-g * np.eye(ing.dims[1]))
        slack = float(np.linalg.eigvalsh(Pi)[0])
        if slack <= 0:
            return None
        return vars_, float(np.sqrt(g)), slack
    slack = float(sol.values["slack"])
    Pi = _pi_matrix(ing, alpha, vars_.X, vars_.Y, vars_.Atc, vars_.Btc,
                    vars_.Ctc, vars_.Dc)
    slack = min(slack, float(np.linalg.eigvalsh(Pi)[0]))
    if slack <= SLACK_ACCEPT:
        return None
    return vars_, slack, slack


@dataclass(frozen=True)
class GridStrategy:
    lo: float = 1e-2
    hi: float = 1e4
    steps: int = 32


@dataclass(frozen=True)
class GoldenStrategy:
    lo: float
    hi: float
    iters: int = 16


def _grid_alphas(strategy: GridStrategy):
    return np.geomspace(strategy.lo, strategy.hi, strategy.steps)


def search_alpha(ing: SynthesisIngredients, strategy=None,
                 objective: str = "none", U=None, refine_iters=16,
                 feas_tol=lmi.DEFAULT_FEAS_TOL, backend=None) -> SynthesisResult:
    """Line search over alpha: logarithmic grid, then golden-section
    refinement around the best grid point (unless an explicit strategy is
    given).  Best means smallest gamma in minimization mode, largest slack
    otherwise."""
    minimize_g = objective == "minimize_gamma_sq"
    trace = []
    best = None  # (score, alpha, vars, gamma_or_slack, slack)

    def evaluate(alpha):
        nonlocal best
        out = solve_fixed_alpha(ing, alpha, objective, feas_tol=feas_tol,
                                backend=backend)
        if out is None:
            trace.append((float(alpha), float("nan"), "infeasible"))
            return None
        vars_, value, slack = out
        trace.append((float(alpha), float(value), "feasible"))
        score = value if minimize_g else -value
        if best is None or score < best[0]:
            best = (score, float(alpha), vars_, value, slack)
        return score

    if isinstance(strategy, GoldenStrategy):
        _golden(evaluate, np.log(strategy.lo), np.log(strategy.hi),
                strategy.iters)
    else:
        grid = strategy if isinstance(strategy, GridStrategy) else GridStrategy()
        alphas = _grid_alphas(grid)
        for a in alphas:
            evaluate(a)
        if best is not None and refine_iters > 0 and not isinstance(
                strategy, GridStrategy):
            j = int(np.argmin(np.abs(alphas - best[1])))
            lo = alphas[max(j - 1, 0)]
            hi = alphas[min(j + 1, len(alphas) - 1)]
            if lo < hi:
                _golden(evaluate, np.log(lo), np.log(hi), refine_iters)

    if best is None:
        raise SynthesisInfeasible(
            "synthesis infeasible over searched alpha range", tuple(trace))
    _, alpha, vars_, value, slack = best
    ctrl = reconstruct(vars_, ing.cs, U=U, C=ing.C)
    return SynthesisResult(
        vars=vars_, controller=ctrl,
        U_choice=np.eye(ing.cs.n) if U is None else np.asarray(U, dtype=float),
        slack=float(slack),
        performance=float(value) if minimize_g else None,
        trace=tuple(trace))


def _golden(evaluate, lo, hi, iters):
    """Golden-section minimization of evaluate(exp(t)) over [lo, hi] in
    log-alpha; infeasible points count as +inf."""
    phi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - phi * (b - a)
    d = a + phi * (b - a)

    def f(t):
        score = evaluate(np.exp(t))
        return np.inf if score is None else score

    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + phi * (b - a)
            fd = f(d)


def reconstruct(vars: DecisionVars, cs: ConsistencySet, U=None, C=None,
                tol=1e-9) -> Controller:
    """Recover the controller realization from the transformed variables;
    U is an arbitrary regular matrix fixing the realization."""
    n, m = cs.n, cs.m
    l = vars.Btc.shape[1]
    U = np.eye(n) if U is None else np.atleast_2d(np.asarray(U, dtype=float))
    if U.shape != (n, n) or not is_regular(U):
        raise ValueError("U must be a regular n x n matrix")
    if C is None:
        raise ValueError("reconstruction needs the measurement matrix C")
    C = np.atleast_2d(np.asarray(C, dtype=float))
    X, Y = vars.X, vars.Y
    IXY = np.eye(n) - X @ Y
    s = np.linalg.svd(IXY, compute_uv=False)
    cond = np.inf if s[-1] == 0 else s[0] / s[-1]
    if cond > RECON_COND_LIMIT:
        raise ValueError(
            f"I - XY nearly singular (cond ~ {cond:.3g}); "
            "re-solve with a larger strictness margin")
    Vt = np.linalg.solve(U, IXY)            # V^T
    As, Bs = cs.As, cs.Bs
    Bc = np.linalg.solve(U, vars.Btc - X @ Bs @ vars.Dc)
    Cc = np.linalg.solve(Vt.T, (vars.Ctc - vars.Dc @ C @ Y).T).T
    Ac_rhs = vars.Atc - X @ (As @ Y + Bs @ vars.Ctc) - U @ Bc @ C @ Y
    Ac = np.linalg.solve(Vt.T, np.linalg.solve(U, Ac_rhs).T).T
    return Controller(Ac=Ac, Bc=Bc, Cc=Cc, Dc=vars.Dc)


def forward_maps(ctrl: Controller, vars: DecisionVars, cs: ConsistencySet,
                 U, C):
    """Transformed variables implied by a controller realization; inverse
    of reconstruct, used to verify round trips."""
    n = cs.n
    U = np.atleast_2d(np.asarray(U, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    Vt = np.linalg.solve(U, np.eye(n) - vars.X @ vars.Y)
    Ctc = ctrl.Dc @ C @ vars.Y + ctrl.Cc @ Vt
    Btc = vars.X @ cs.Bs @ ctrl.Dc + U @ ctrl.Bc
    Atc = (vars.X @ (cs.As @ vars.Y + cs.Bs @ Ctc)
           + U @ (ctrl.Bc @ C @ vars.Y + ctrl.Ac @ Vt))
    return Atc, Btc, Ctc
