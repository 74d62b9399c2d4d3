"""Certificate-based verification: dissipativity LMIs, sampled worst-case
checks over the consistency set, trajectory-level storage checks and a
sampling falsifier for the scalar-parametrized matrix inequality reduction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import lmi
from .data import ConsistencySet, membership, sample_members
from .model import (DimensionError, Plant, StateSpace, close_loop,
                    frequency_response)
from .synthesis import SupplyRate, SynthesisIngredients


@dataclass(frozen=True)
class Certificate:
    """Storage-function matrix P > 0 with the strictness margin of the
    dissipativity LMI it satisfies."""

    P: np.ndarray
    slack: float


def _dissipativity_lmi(sys: StateSpace, Q, S, R, P):
    """Value of the dissipation matrix inequality at P (negative definite
    on success):

        -P + A^T P A + [0 I; C D]^T [[Q, S], [S^T, R]] [0 I; C D]
    """
    nu, rho, sigma = sys.dims
    A, B, C, D = sys.A, sys.B, sys.C, sys.D
    outer = np.block([[np.eye(nu), np.zeros((nu, rho))],
                      [A, B],
                      [np.zeros((rho, nu)), np.eye(rho)],
                      [C, D]])
    middle = np.block([
        [-P, np.zeros((nu, nu + rho + sigma))],
        [np.zeros((nu, nu)), P, np.zeros((nu, rho + sigma))],
        [np.zeros((rho, 2 * nu)), Q, S],
        [np.zeros((sigma, 2 * nu)), S.T, R],
    ])
    M = outer.T @ middle @ outer
    return 0.5 * (M + M.T)


def supply_value(Q, S, R, w, z):
    """Supply rate s(w, z) = -(w^T Q w + 2 w^T S z + z^T R z)."""
    w = np.asarray(w, dtype=float).reshape(-1)
    z = np.asarray(z, dtype=float).reshape(-1)
    return float(-(w @ Q @ w + 2.0 * w @ S @ z + z @ R @ z))


def _psd_sqrt_factor(W, reg):
    """Factor R with R R^T ~ W for a nearly-PSD W, flooring eigenvalues at
    reg so roundoff-indefinite Gramians cannot break the factorization."""
    w, V = np.linalg.eigh(0.5 * (W + W.T))
    return V @ np.diag(np.sqrt(np.maximum(w, reg)))


def _balancing_transform(sys: StateSpace):
    """State transform L that balances the reachability and observability
    Gramians (regularized so deficient modes do not break the
    factorization).  Only defined for Schur-stable realizations.  Starts
    from a diagonal similarity so that wildly mis-scaled states do not
    poison the Lyapunov solves; falls back to that diagonal scaling when
    the Gramian computation is itself too ill-conditioned."""
    import warnings

    from scipy.linalg import LinAlgWarning, matrix_balance, solve_discrete_lyapunov

    nu = sys.dims[0]
    _, (scale, _) = matrix_balance(sys.A, separate=True)
    Ld = np.diag(1.0 / scale)
    A = Ld @ sys.A @ np.diag(scale)
    B = Ld @ sys.B
    C = sys.C @ np.diag(scale)
    reg = 1e-8 * (1.0 + np.linalg.norm(B, 2)**2 + np.linalg.norm(C, 2)**2)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", LinAlgWarning)
            Wc = solve_discrete_lyapunov(A, B @ B.T + reg * np.eye(nu))
            Wo = solve_discrete_lyapunov(A.T, C.T @ C + reg * np.eye(nu))
        Rc = _psd_sqrt_factor(Wc, reg)
        U, s, _ = np.linalg.svd(Rc.T @ (0.5 * (Wo + Wo.T)) @ Rc)
        s = np.maximum(s, reg)
        # x_bal = L x with L = diag(s)^{1/4} U^T Rc^{-1} on top of the
        # diagonal pre-scaling
        return np.diag(s**0.25) @ U.T @ np.linalg.inv(Rc) @ Ld
    except (np.linalg.LinAlgError, LinAlgWarning):
        return Ld


def certify_dissipativity(sys: StateSpace, supply,
                          feas_tol=None) -> Certificate | None:
    """Search for P > 0 satisfying the strict dissipativity LMI, with the
    strictness margin maximized.  Returns None when no certificate is
    found (the system need not be dissipative at this supply)."""
    if isinstance(supply, SupplyRate):
        Q, S, R = supply.Q, supply.S, supply.R
    else:
        Q, S, R = (np.atleast_2d(np.asarray(M, dtype=float)) for M in supply)
    orig = sys
    nu, rho, sigma = sys.dims
    if Q.shape != (rho, rho) or R.shape != (sigma, sigma) \
            or S.shape != (rho, sigma):
        raise DimensionError(
            f"supply blocks sized for (p={Q.shape[0]}, q={R.shape[0]}) do "
            f"not match system channels (p={rho}, q={sigma})")
    if feas_tol is None:
        feas_tol = lmi.DEFAULT_FEAS_TOL

    # R is PSD, so the (1,1) block of the LMI forces A^T P A - P < 0: a
    # certificate can only exist for Schur-stable A.  That makes Gramian
    # balancing admissible, and it rescues realizations whose states live
    # on wildly different scales (P transforms congruently).
    if sys.spectral_radius() >= 1.0:
        return None
    L = _balancing_transform(sys)
    Linv = np.linalg.inv(L)
    sys = StateSpace(A=L @ sys.A @ Linv, B=L @ sys.B,
                     C=sys.C @ Linv, D=sys.D)

    # scalarize P by upper triangle, probe the two affine constraints
    keys = [(i, j) for i in range(nu) for j in range(i, nu)]

    def pmat(values):
        P = np.zeros((nu, nu))
        for (i, j), v in values.items():
            P[i, j] = v
            P[j, i] = v
        return P

    base_neg = -_dissipativity_lmi(sys, Q, S, R, pmat({}))
    d = base_neg.shape[0]
    var_ids = []
    coeffs_neg = []
    coeffs_pos = []
    for key in keys:
        i, j = key
        var_id = f"P[{i},{j}]"
        var_ids.append(var_id)
        E = pmat({key: 1.0})
        # the inequality is linear in P, so the unit probe minus the
        # supply-only base gives the exact coefficient block
        coeffs_neg.append((var_id,
                           -_dissipativity_lmi(sys, Q, S, R, E) - base_neg))
        coeffs_pos.append((var_id, E))
    var_ids.append("slack")
    neg = lmi.AffineLmi(constant=base_neg,
                        coeffs=tuple(coeffs_neg) + (("slack", -np.eye(d)),))
    pos = lmi.AffineLmi(constant=np.zeros((nu, nu)),
                        coeffs=tuple(coeffs_pos) + (("slack", -np.eye(nu)),))
    problem = lmi.SdpProblem(variables=tuple(var_ids),
                             constraints=(neg, pos),
                             objective={"slack": -1.0})
    sol = lmi.solve_sdp(problem, feas_tol=feas_tol)
    if sol.status not in ("optimal", "inaccurate"):
        return None
    slack = float(sol.values["slack"])
    Pb = pmat({(i, j): sol.values[f"P[{i},{j}]"] for i, j in keys})
    # map the storage matrix back to the original coordinates and re-check
    # there, independent of the solver status
    P = L.T @ Pb @ L
    P = 0.5 * (P + P.T)
    Mb = _dissipativity_lmi(sys, Q, S, R, Pb)
    margin = min(-float(np.linalg.eigvalsh(Mb)[-1]),
                 float(np.linalg.eigvalsh(Pb)[0]))
    if margin <= feas_tol:
        return None
    # the congruence preserves signs exactly, but an ill-conditioned
    # back-transform can push strict eigenvalues below the scale-relative
    # threshold; reject only if definiteness visibly flips
    M = _dissipativity_lmi(orig, Q, S, R, P)
    if lmi.definiteness(M) not in ("negdef", "nsd") \
            or lmi.definiteness(P) not in ("posdef", "psd"):
        return None
    return Certificate(P=P, slack=min(slack, margin))


def hinf_bisect(sys: StateSpace, lo=1e-6, hi=None, rel_tol=1e-4) -> float:
    """Smallest gamma for which an H-infinity dissipativity certificate
    exists, by bisection."""
    nu, rho, sigma = sys.dims

    def hinf_qsr(g):
        return (-g**2 * np.eye(rho), np.zeros((rho, sigma)), np.eye(sigma))

    if hi is None:
        hi = 2.0
        for _ in range(60):
            if certify_dissipativity(sys, hinf_qsr(hi)) is not None:
                break
            hi *= 2.0
        else:
            raise RuntimeError("no finite H-infinity certificate found")
    while (hi - lo) > rel_tol * hi:
        mid = 0.5 * (lo + hi)
        if certify_dissipativity(sys, hinf_qsr(mid)) is not None:
            hi = mid
        else:
            lo = mid
    return hi


def worst_case_check(ing: SynthesisIngredients, ctrl, samples: int,
                     seed: int, grid_size: int = 512) -> dict:
    """Close the loop with every sampled consistent (A, B), certify each
    and record the worst frequency-curve peak."""
    if samples <= 0:
        return {"all_certified": True, "min_slack": float("inf"),
                "worst_peak_gain": float("nan"), "samples": 0,
                "warning": "no samples requested; vacuous verdict"}
    pairs, degenerate = sample_members(ing.cs, samples, seed)
    all_certified = True
    min_slack = float("inf")
    worst_peak = 0.0
    results = []
    for A, B in pairs:
        plant = Plant(A=A, B1=ing.B1, B=B, C1=ing.C1, D1=ing.D1,
                      E=ing.E, C=ing.C, F=ing.F)
        loop = close_loop(plant, ctrl)
        cert = certify_dissipativity(loop, ing.supply)
        if cert is None:
            all_certified = False
            results.append({"certified": False, "peak": None})
            continue
        min_slack = min(min_slack, cert.slack)
        peak = frequency_response(loop, grid_size).peak[1]
        worst_peak = max(worst_peak, peak)
        results.append({"certified": True, "peak": peak})
    report = {"all_certified": all_certified,
              "min_slack": min_slack if min_slack < float("inf") else None,
              "worst_peak_gain": worst_peak,
              "samples": len(pairs),
              "results": results}
    if degenerate:
        report["warning"] = ("zero-rank residual: consistency set is the "
                            "single nominal system")
    return report


def storage_trajectory_check(sys: StateSpace, cert: Certificate, supply,
                             horizon: int = 200, trials: int = 100,
                             seed: int = 0, slack_tol=1e-9) -> bool:
    """Redundant trajectory-level check of the storage function: the
    stored-energy increment must stay below the supplied energy at every
    step of random bounded-disturbance trajectories.  Steps where both
    sides are exactly zero are skipped."""
    if isinstance(supply, SupplyRate):
        Q, S, R = supply.Q, supply.S, supply.R
    else:
        Q, S, R = (np.atleast_2d(np.asarray(M, dtype=float)) for M in supply)
    nu, rho, sigma = sys.dims
    rng = np.random.default_rng(seed)
    P = cert.P
    for _ in range(trials):
        x = rng.standard_normal(nu)
        for _ in range(horizon):
            w = rng.uniform(-1.0, 1.0, rho)
            z = sys.C @ x + sys.D @ w
            x_next = sys.A @ x + sys.B @ w
            dv = float(x_next @ P @ x_next - x @ P @ x)
            s = supply_value(Q, S, R, w, z)
            if dv == 0.0 and s == 0.0:
                x = x_next
                continue
            if dv >= s + slack_tol:
                return False
            x = x_next
    return True


def s_lemma_check(M, K, alpha: float, samples: int = 1000,
                  seed: int = 0) -> dict:
    """Sampling falsifier for the reduction  M - alpha K > 0  implies
    [I Z^T] M [I Z^T]^T > 0 on the QMI-defined set of Z.

    A returned counterexample would indicate an implementation bug, since
    the reduction is an exact theorem under its hypotheses."""
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    M = np.asarray(M, dtype=float)
    K = np.asarray(K, dtype=float)
    total = M.shape[0]
    if M.shape != K.shape or M.shape != (total, total):
        raise DimensionError("M and K must be square of equal size")
    # partition size: K11 is n x n with n + N = total; infer n from the
    # largest leading block whose complement is negative definite
    n = _infer_partition(K)
    N = total - n
    K11, K12, K22 = K[:n, :n], K[:n, n:], K[n:, n:]
    if np.linalg.eigvalsh(K22)[-1] >= -lmi.scale_tol(K22):
        raise ValueError("hypothesis violated: K22 must be negative definite")
    schur = K11 - K12 @ np.linalg.solve(K22, K12.T)
    schur = 0.5 * (schur + schur.T)
    if np.linalg.eigvalsh(schur)[0] < -lmi.scale_tol(schur):
        raise ValueError("hypothesis violated: Schur complement of K22 "
                         "must be positive semidefinite")
    red = M - alpha * K
    if np.linalg.eigvalsh(0.5 * (red + red.T))[0] <= lmi.scale_tol(red):
        return {"reduction_holds": False, "counterexample": None}

    def inside(Z):
        G = np.hstack([np.eye(n), Z.T])
        V = G @ K @ G.T
        return np.linalg.eigvalsh(0.5 * (V + V.T))[0] >= -lmi.scale_tol(K)

    def quad_pos(Z):
        G = np.hstack([np.eye(n), Z.T])
        V = G @ M @ G.T
        return np.linalg.eigvalsh(0.5 * (V + V.T))[0] > 0

    Zc = -np.linalg.solve(K22, K12.T)  # N x n, center of the Z-ellipsoid
    rng = np.random.default_rng(seed)
    checked = [Zc]
    for _ in range(samples - 1):
        D = rng.standard_normal((N, n))
        D /= np.linalg.norm(D)
        hi = 1.0
        for _ in range(60):
            if not inside(Zc + hi * D):
                break
            hi *= 2.0
        lo = 0.0
        for _ in range(40):
            mid = 0.5 * (lo + hi)
            if inside(Zc + mid * D):
                lo = mid
            else:
                hi = mid
        t = lo if rng.uniform() < 0.5 else lo * rng.uniform()
        checked.append(Zc + t * D)
    for Z in checked:
        if not quad_pos(Z):
            return {"reduction_holds": True, "counterexample": Z}
    return {"reduction_holds": True, "counterexample": None}


def _infer_partition(K):
    """Pick n such that the trailing block K22 is negative definite; use
    the smallest trailing negative-definite block of maximal size."""
    total = K.shape[0]
    for n in range(1, total):
        K22 = K[n:, n:]
        if np.linalg.eigvalsh(0.5 * (K22 + K22.T))[-1] < -lmi.scale_tol(K22):
            return n
    raise ValueError("no trailing block of K is negative definite")
