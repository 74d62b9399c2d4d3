"""Data recording, disturbance bounds and the set of systems consistent
with a recorded input-state trajectory.

The consistency set is a bounded matrix ellipsoid in (A, B)-space described
by a quadratic matrix inequality; its blocks, analytic center and residual
factor feed directly into the synthesis LMI.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .lmi import psd_factor, scale_tol
from .model import DimensionError, Plant

RANK_RTOL = 1e-8
MEMBERSHIP_TOL = 1e-9


@dataclass(frozen=True)
class DataRecord:
    """One recorded input-state trajectory, arranged as shifted snapshot
    matrices.  Wminus_true is only carried by test harnesses."""

    Xplus: np.ndarray
    Xminus: np.ndarray
    Uminus: np.ndarray
    Wminus_true: np.ndarray | None = None

    def __post_init__(self):
        Xp = np.atleast_2d(np.asarray(self.Xplus, dtype=float))
        Xm = np.atleast_2d(np.asarray(self.Xminus, dtype=float))
        Um = np.atleast_2d(np.asarray(self.Uminus, dtype=float))
        if Xp.shape != Xm.shape:
            raise DimensionError("Xplus and Xminus must have equal shape")
        if Um.shape[1] != Xp.shape[1]:
            raise DimensionError("Uminus column count must match Xplus")
        if Xp.shape[1] < 1:
            raise DimensionError("need at least one data column")
        object.__setattr__(self, "Xplus", Xp)
        object.__setattr__(self, "Xminus", Xm)
        object.__setattr__(self, "Uminus", Um)
        if self.Wminus_true is not None:
            Wm = np.atleast_2d(np.asarray(self.Wminus_true, dtype=float))
            if Wm.shape[1] != Xp.shape[1]:
                raise DimensionError("Wminus_true column count must match Xplus")
            object.__setattr__(self, "Wminus_true", Wm)

    @property
    def n(self):
        return self.Xplus.shape[0]

    @property
    def m(self):
        return self.Uminus.shape[0]

    @property
    def N(self):
        return self.Xplus.shape[1]

    def to_json(self, path=None):
        doc = {
            "n": self.n,
            "m": self.m,
            "p": None if self.Wminus_true is None else self.Wminus_true.shape[0],
            "N": self.N,
            "Xplus": self.Xplus.tolist(),
            "Xminus": self.Xminus.tolist(),
            "Uminus": self.Uminus.tolist(),
        }
        if path is not None:
            with open(path, "w") as f:
                json.dump(doc, f)
        return doc

    @staticmethod
    def from_json(doc_or_path):
        if isinstance(doc_or_path, (str, bytes)) or hasattr(doc_or_path, "read"):
            if hasattr(doc_or_path, "read"):
                doc = json.load(doc_or_path)
            else:
                with open(doc_or_path) as f:
                    doc = json.load(f)
        else:
            doc = doc_or_path
        return DataRecord(Xplus=doc["Xplus"], Xminus=doc["Xminus"],
                          Uminus=doc["Uminus"])


@dataclass(frozen=True)
class DisturbanceBound:
    """Quadratic bound on the unknown disturbance snapshot matrix W:

        [I W] [[Phi11, Phi12], [Phi12^T, Phi22]] [I W]^T >= 0,

    with Phi22 negative definite so the admissible set is bounded."""

    Phi11: np.ndarray
    Phi12: np.ndarray
    Phi22: np.ndarray

    def __post_init__(self):
        P11 = np.atleast_2d(np.asarray(self.Phi11, dtype=float))
        P12 = np.atleast_2d(np.asarray(self.Phi12, dtype=float))
        P22 = np.atleast_2d(np.asarray(self.Phi22, dtype=float))
        p = P11.shape[0]
        N = P22.shape[0]
        if P11.shape != (p, p) or P22.shape != (N, N) or P12.shape != (p, N):
            raise DimensionError("inconsistent disturbance-bound block shapes")
        P11 = 0.5 * (P11 + P11.T)
        P22 = 0.5 * (P22 + P22.T)
        if np.linalg.eigvalsh(P22)[-1] >= -scale_tol(P22):
            raise ValueError("Phi22 must be negative definite")
        schur = P11 - P12 @ np.linalg.solve(P22, P12.T)
        if np.linalg.eigvalsh(0.5 * (schur + schur.T))[0] < -scale_tol(schur):
            raise ValueError("empty disturbance set: "
                             "Phi11 - Phi12 Phi22^{-1} Phi12^T is not PSD")
        object.__setattr__(self, "Phi11", P11)
        object.__setattr__(self, "Phi12", P12)
        object.__setattr__(self, "Phi22", P22)

    @property
    def p(self):
        return self.Phi11.shape[0]

    @property
    def N(self):
        return self.Phi22.shape[0]

    def satisfied_by(self, W) -> bool:
        W = np.atleast_2d(np.asarray(W, dtype=float))
        V = (self.Phi11 + self.Phi12 @ W.T + W @ self.Phi12.T
             + W @ self.Phi22 @ W.T)
        return np.linalg.eigvalsh(0.5 * (V + V.T))[0] >= -scale_tol(V)


@dataclass(frozen=True)
class ConsistencySet:
    """Blocks of the (2n+m)-sized QMI matrix describing all (A, B) pairs
    consistent with the data, plus the analytic center and the residual
    factor used by the synthesis LMI."""

    PhiT11: np.ndarray
    PhiT12: np.ndarray
    PhiT13: np.ndarray
    PhiT22: np.ndarray
    PhiT23: np.ndarray
    PhiT33: np.ndarray
    As: np.ndarray | None = None
    Bs: np.ndarray | None = None
    Xi: np.ndarray | None = None
    Lambda: np.ndarray | None = None
    ntilde: int | None = None

    @property
    def n(self):
        return self.PhiT11.shape[0]

    @property
    def m(self):
        return self.PhiT33.shape[0]

    def assembled(self) -> np.ndarray:
        top = np.hstack([self.PhiT11, self.PhiT12, self.PhiT13])
        mid = np.hstack([self.PhiT12.T, self.PhiT22, self.PhiT23])
        bot = np.hstack([self.PhiT13.T, self.PhiT23.T, self.PhiT33])
        M = np.vstack([top, mid, bot])
        return 0.5 * (M + M.T)

    def k22(self) -> np.ndarray:
        """Lower-right (n+m) block that must be negative definite for the
        set to be a bounded ellipsoid."""
        return np.block([[self.PhiT22, self.PhiT23],
                         [self.PhiT23.T, self.PhiT33]])

    def qmi_value(self, A, B) -> np.ndarray:
        n, m = self.n, self.m
        A = np.atleast_2d(np.asarray(A, dtype=float)).reshape(n, n)
        B = np.atleast_2d(np.asarray(B, dtype=float)).reshape(n, m)
        G = np.hstack([np.eye(n), A, B])
        V = G @ self.assembled() @ G.T
        return 0.5 * (V + V.T)

    def to_json(self, path=None):
        doc = {
            "n": self.n,
            "m": self.m,
            "PhiT11": self.PhiT11.tolist(),
            "PhiT12": self.PhiT12.tolist(),
            "PhiT13": self.PhiT13.tolist(),
            "PhiT22": self.PhiT22.tolist(),
            "PhiT23": self.PhiT23.tolist(),
            "PhiT33": self.PhiT33.tolist(),
            "As": None if self.As is None else self.As.tolist(),
            "Bs": None if self.Bs is None else self.Bs.tolist(),
            "ntilde": self.ntilde,
        }
        if path is not None:
            with open(path, "w") as f:
                json.dump(doc, f)
        return doc


def record(plant: Plant, u_seq, w_seq, x0) -> DataRecord:
    """Drive the plant open loop and collect the shifted state/input
    snapshot matrices (the generating disturbance is kept for tests)."""
    n, p, m, q, l = plant.dims
    u_seq = [np.asarray(u, dtype=float).reshape(-1) for u in u_seq]
    w_seq = [np.asarray(w, dtype=float).reshape(-1) for w in w_seq]
    if len(u_seq) != len(w_seq) or len(u_seq) < 1:
        raise DimensionError("u_seq and w_seq must have equal length >= 1")
    for k, (u, w) in enumerate(zip(u_seq, w_seq)):
        if u.shape != (m,):
            raise DimensionError(f"u_seq[{k}]: expected length {m}")
        if w.shape != (p,):
            raise DimensionError(f"w_seq[{k}]: expected length {p}")
    x = np.asarray(x0, dtype=float).reshape(-1)
    if x.shape != (n,):
        raise DimensionError(f"x0: expected length {n}")
    xs = [x]
    for u, w in zip(u_seq, w_seq):
        x = plant.A @ x + plant.B @ u + plant.B1 @ w
        xs.append(x)
    Xminus = np.column_stack(xs[:-1])
    Xplus = np.column_stack(xs[1:])
    Uminus = np.column_stack(u_seq)
    Wminus = np.column_stack(w_seq)
    return DataRecord(Xplus=Xplus, Xminus=Xminus, Uminus=Uminus,
                      Wminus_true=Wminus)


def energy_phi(eps: float, N: int, p: int) -> DisturbanceBound:
    """Energy bound W W^T <= eps^2 N I encoded as a quadratic bound."""
    if eps <= 0:
        raise ValueError("energy_eps must be positive")
    if N < 1 or p < 1:
        raise ValueError("N and p must be >= 1")
    return DisturbanceBound(Phi11=eps**2 * N * np.eye(p),
                            Phi12=np.zeros((p, N)),
                            Phi22=-np.eye(N))


def build_phi_tilde(rec: DataRecord, bound: DisturbanceBound,
                    B1) -> ConsistencySet:
    """Push the disturbance bound through the data equation to get the
    QMI matrix over (A, B)."""
    n, m, N = rec.n, rec.m, rec.N
    B1 = np.atleast_2d(np.asarray(B1, dtype=float))
    if B1.shape[0] != n:
        raise DimensionError(f"B1 must have {n} rows, got {B1.shape}")
    p = B1.shape[1]
    if (bound.p, bound.N) != (p, N):
        raise DimensionError(
            f"bound dims (p={bound.p}, N={bound.N}) do not match "
            f"record/B1 (p={p}, N={N})")
    Phi_full = np.block([
        [B1 @ bound.Phi11 @ B1.T, B1 @ bound.Phi12],
        [bound.Phi12.T @ B1.T, bound.Phi22],
    ])
    M = np.block([
        [np.eye(n), np.zeros((n, n)), np.zeros((n, m))],
        [rec.Xplus.T, -rec.Xminus.T, -rec.Uminus.T],
    ])
    PhiT = M.T @ Phi_full @ M
    PhiT = 0.5 * (PhiT + PhiT.T)
    return ConsistencySet(
        PhiT11=PhiT[:n, :n],
        PhiT12=PhiT[:n, n:2 * n],
        PhiT13=PhiT[:n, 2 * n:],
        PhiT22=PhiT[n:2 * n, n:2 * n],
        PhiT23=PhiT[n:2 * n, 2 * n:],
        PhiT33=PhiT[2 * n:, 2 * n:],
    )


def check_assumptions(rec: DataRecord, cs: ConsistencySet) -> dict:
    """Diagnostic report for the persistency-of-excitation rank condition,
    boundedness of the consistency set and its nonemptiness."""
    stacked = np.vstack([rec.Xminus, rec.Uminus])
    s = np.linalg.svd(stacked, compute_uv=False)
    full = rec.n + rec.m
    rank = int(np.sum(s > RANK_RTOL * s[0])) if s[0] > 0 else 0
    K22 = cs.k22()
    k22_negdef = np.linalg.eigvalsh(K22)[-1] < -scale_tol(K22)
    Phi1rest = np.hstack([cs.PhiT12, cs.PhiT13])
    if k22_negdef:
        schur = cs.PhiT11 - Phi1rest @ np.linalg.solve(K22, Phi1rest.T)
        schur = 0.5 * (schur + schur.T)
        sigma_nonempty = bool(np.linalg.eigvalsh(schur)[0] >= -scale_tol(schur))
    else:
        sigma_nonempty = False
    return {
        "rank_ok": rank == full and len(s) >= full,
        "sigma_nonempty": sigma_nonempty,
        "k22_negdef": bool(k22_negdef),
    }


def membership(A, B, cs: ConsistencySet, tol=MEMBERSHIP_TOL):
    """Whether (A, B) is consistent with the data, plus the smallest
    eigenvalue of the QMI value as a signed margin."""
    V = cs.qmi_value(A, B)
    margin = float(np.linalg.eigvalsh(V)[0])
    return margin >= -scale_tol(cs.assembled(), tol), margin


def nominal_system(cs: ConsistencySet):
    """Analytic center of the consistency set; coincides with the true
    dynamics for noise-free, persistently exciting data.  Returns a new
    ConsistencySet with (As, Bs) filled."""
    n, m = cs.n, cs.m
    K22 = cs.k22()
    if np.linalg.eigvalsh(K22)[-1] >= -scale_tol(K22):
        raise ValueError("lower-right QMI block is not negative definite; "
                         "run check_assumptions on the record")
    rhs = np.vstack([cs.PhiT12.T, cs.PhiT13.T])
    AB = -np.linalg.solve(K22, rhs)  # (n+m) x n
    As = AB[:n, :].T
    Bs = AB[n:, :].T
    return replace(cs, As=As, Bs=Bs)


def residual_factor(cs: ConsistencySet, tol=1e-9):
    """Low-rank factor of the QMI value at the analytic center.  Returns a
    new ConsistencySet with (Xi, Lambda, ntilde) filled."""
    if cs.As is None or cs.Bs is None:
        raise ValueError("nominal_system must run before residual_factor")
    residual = cs.qmi_value(cs.As, cs.Bs)
    t = scale_tol(residual, tol)
    w = np.linalg.eigvalsh(residual)
    if w[0] < -t:
        raise ValueError("residual indefinite: consistency set empty or "
                         f"tolerance too tight (min eigenvalue {w[0]:.3g})")
    Xi, Lam = psd_factor(residual, tol)
    return replace(cs, Xi=Xi, Lambda=Lam, ntilde=Xi.shape[1])


def complete(rec: DataRecord, bound: DisturbanceBound, B1) -> ConsistencySet:
    """build_phi_tilde, nominal_system and residual_factor in one go."""
    cs = build_phi_tilde(rec, bound, B1)
    cs = nominal_system(cs)
    return residual_factor(cs)


def _boundary_scale(cs: ConsistencySet, dA, dB, iters=40):
    """Largest t with (As + t dA, Bs + t dB) still inside, by doubling then
    bisection.  Every ray from the center crosses the boundary once."""
    def margin(t):
        return membership(cs.As + t * dA, cs.Bs + t * dB, cs)[1]

    hi = 1.0
    for _ in range(60):
        if margin(hi) < 0:
            break
        hi *= 2.0
    else:
        raise RuntimeError("ray never left the consistency set; "
                           "set appears unbounded")
    lo = 0.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if margin(mid) >= 0:
            lo = mid
        else:
            hi = mid
    return lo


def sample_members(cs: ConsistencySet, count: int, seed: int):
    """Deterministically sample consistent (A, B) pairs: the analytic
    center, boundary points along random directions, and random interior
    points.  Returns (samples, degenerate) where degenerate flags a
    zero-residual set collapsing to the single center point."""
    if cs.As is None or cs.ntilde is None:
        raise ValueError("consistency set incomplete; run nominal_system "
                         "and residual_factor first")
    n, m = cs.n, cs.m
    samples = [(cs.As.copy(), cs.Bs.copy())]
    if cs.ntilde == 0:
        samples = [(cs.As.copy(), cs.Bs.copy()) for _ in range(max(count, 1))]
        return samples[:max(count, 1)], True
    rng = np.random.default_rng(seed)
    while len(samples) < count:
        dA = rng.standard_normal((n, n))
        dB = rng.standard_normal((n, m))
        scale = np.sqrt(np.sum(dA**2) + np.sum(dB**2))
        dA /= scale
        dB /= scale
        t_max = _boundary_scale(cs, dA, dB)
        # alternate boundary and interior points
        t = t_max if len(samples) % 2 == 1 else t_max * rng.uniform(0.0, 1.0)
        samples.append((cs.As + t * dA, cs.Bs + t * dB))
    return samples[:count], False
