"""State-space plant/controller types, closed-loop assembly, simulation and
frequency response for discrete-time LTI systems."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_DIM_CAP = 64
REGULARITY_RTOL = 1e-10


class DimensionError(ValueError):
    """Raised when matrix blocks do not fit together."""


def _as_matrix(M, rows, cols, name):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape != (rows, cols):
        raise DimensionError(
            f"{name}: expected shape {(rows, cols)}, got {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name}: contains NaN/Inf entries")
    return M


def is_regular(M, rtol=REGULARITY_RTOL):
    """A square matrix is regular if smin > rtol * smax."""
    s = np.linalg.svd(M, compute_uv=False)
    return s[-1] > rtol * s[0]


@dataclass(frozen=True)
class Plant:
    """Open-loop plant:

        x+ = A x + B1 w + B u
        z  = C1 x + D1 w + E u
        y  = C x + F w

    with state dim n, disturbance dim p, control dim m, performance output
    dim q and measured output dim l.
    """

    A: np.ndarray
    B1: np.ndarray
    B: np.ndarray
    C1: np.ndarray
    D1: np.ndarray
    E: np.ndarray
    C: np.ndarray
    F: np.ndarray

    def __post_init__(self):
        n, p, m, q, l = self.dims
        if min(n, p, m, q, l) < 1:
            raise DimensionError(f"all dimensions must be >= 1, got {self.dims}")
        if max(n, p, m, q, l) > DEFAULT_DIM_CAP:
            raise DimensionError(
                f"dimension cap {DEFAULT_DIM_CAP} exceeded: {self.dims}")
        object.__setattr__(self, "A", _as_matrix(self.A, n, n, "A"))
        object.__setattr__(self, "B1", _as_matrix(self.B1, n, p, "B1"))
        object.__setattr__(self, "B", _as_matrix(self.B, n, m, "B"))
        object.__setattr__(self, "C1", _as_matrix(self.C1, q, n, "C1"))
        object.__setattr__(self, "D1", _as_matrix(self.D1, q, p, "D1"))
        object.__setattr__(self, "E", _as_matrix(self.E, q, m, "E"))
        object.__setattr__(self, "C", _as_matrix(self.C, l, n, "C"))
        object.__setattr__(self, "F", _as_matrix(self.F, l, p, "F"))

    @property
    def dims(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B1 = np.atleast_2d(np.asarray(self.B1, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        C1 = np.atleast_2d(np.asarray(self.C1, dtype=float))
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        return (A.shape[0], B1.shape[1], B.shape[1], C1.shape[0], C.shape[0])

    def with_dynamics(self, A, B):
        """Same known channel matrices, different (A, B) pair."""
        return Plant(A=A, B1=self.B1, B=B, C1=self.C1, D1=self.D1,
                     E=self.E, C=self.C, F=self.F)


@dataclass(frozen=True)
class Controller:
    """Dynamic output-feedback controller:

        xc+ = Ac xc + Bc y
        u   = Cc xc + Dc y
    """

    Ac: np.ndarray
    Bc: np.ndarray
    Cc: np.ndarray
    Dc: np.ndarray

    def __post_init__(self):
        Ac = np.atleast_2d(np.asarray(self.Ac, dtype=float))
        n = Ac.shape[0]
        Bc = np.atleast_2d(np.asarray(self.Bc, dtype=float))
        Cc = np.atleast_2d(np.asarray(self.Cc, dtype=float))
        l = Bc.shape[1]
        m = Cc.shape[0]
        object.__setattr__(self, "Ac", _as_matrix(Ac, n, n, "Ac"))
        object.__setattr__(self, "Bc", _as_matrix(Bc, n, l, "Bc"))
        object.__setattr__(self, "Cc", _as_matrix(Cc, m, n, "Cc"))
        object.__setattr__(self, "Dc", _as_matrix(self.Dc, m, l, "Dc"))

    @property
    def dims(self):
        return (self.Ac.shape[0], self.Cc.shape[0], self.Bc.shape[1])


@dataclass(frozen=True)
class StateSpace:
    """Generic system x+ = A x + B u, y = C x + D u used for analysis."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        nu = A.shape[0]
        rho = B.shape[1]
        sigma = C.shape[0]
        object.__setattr__(self, "A", _as_matrix(A, nu, nu, "A"))
        object.__setattr__(self, "B", _as_matrix(B, nu, rho, "B"))
        object.__setattr__(self, "C", _as_matrix(C, sigma, nu, "C"))
        object.__setattr__(self, "D", _as_matrix(self.D, sigma, rho, "D"))

    @property
    def dims(self):
        return (self.A.shape[0], self.B.shape[1], self.C.shape[0])

    def spectral_radius(self):
        return float(np.max(np.abs(np.linalg.eigvals(self.A))))


@dataclass(frozen=True)
class FrequencyCurve:
    """Largest-singular-value gain over normalized frequencies in [0, pi]."""

    grid: np.ndarray
    gain: np.ndarray
    peak: tuple = field(init=False)

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        gain = np.asarray(self.gain, dtype=float)
        if grid.shape != gain.shape or grid.ndim != 1:
            raise DimensionError("grid and gain must be 1-d of equal length")
        if np.any(gain < 0):
            raise ValueError("gain entries must be nonnegative")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "gain", gain)
        j = int(np.argmax(gain))
        object.__setattr__(self, "peak", (float(grid[j]), float(gain[j])))


def close_loop(plant: Plant, ctrl: Controller) -> StateSpace:
    """Interconnect plant and controller into the 2n-state closed loop
    mapping disturbance w to performance output z."""
    n, p, m, q, l = plant.dims
    nc, mc, lc = ctrl.dims
    if (nc, mc, lc) != (n, m, l):
        raise DimensionError(
            f"controller dims (n={nc}, m={mc}, l={lc}) do not match "
            f"plant (n={n}, m={m}, l={l})")
    A, B1, B = plant.A, plant.B1, plant.B
    C1, D1, E = plant.C1, plant.D1, plant.E
    C, F = plant.C, plant.F
    Ac, Bc, Cc, Dc = ctrl.Ac, ctrl.Bc, ctrl.Cc, ctrl.Dc
    At = np.block([[A + B @ Dc @ C, B @ Cc],
                   [Bc @ C, Ac]])
    Bt = np.vstack([B1 + B @ Dc @ F, Bc @ F])
    Ct = np.hstack([C1 + E @ Dc @ C, E @ Cc])
    Dt = D1 + E @ Dc @ F
    return StateSpace(A=At, B=Bt, C=Ct, D=Dt)


def simulate(sys: StateSpace, x0, inputs):
    """Run the recursion for the given input sequence.

    Returns (states, outputs) with len(states) == N + 1 and
    len(outputs) == N.
    """
    nu, rho, sigma = sys.dims
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape != (nu,):
        raise DimensionError(f"x0: expected length {nu}, got {x0.shape}")
    inputs = [np.asarray(u, dtype=float).reshape(-1) for u in inputs]
    if len(inputs) < 1:
        raise DimensionError("need at least one input sample")
    for k, u in enumerate(inputs):
        if u.shape != (rho,):
            raise DimensionError(f"inputs[{k}]: expected length {rho}")
    states = [x0]
    outputs = []
    x = x0
    for u in inputs:
        outputs.append(sys.C @ x + sys.D @ u)
        x = sys.A @ x + sys.B @ u
        states.append(x)
    return states, outputs


def transfer_gain(sys: StateSpace, theta: float) -> float:
    """Largest singular value of C (e^{i theta} I - A)^{-1} B + D."""
    nu = sys.A.shape[0]
    z = np.exp(1j * theta)
    G = sys.C @ np.linalg.solve(z * np.eye(nu) - sys.A, sys.B) + sys.D
    return float(np.linalg.svd(G, compute_uv=False)[0])


def frequency_response(sys: StateSpace, grid_size: int = 2048) -> FrequencyCurve:
    """Sample the largest-singular-value gain on a uniform frequency grid
    over [0, pi].  Requires a Schur-stable state matrix."""
    if grid_size < 2:
        raise ValueError("grid_size must be >= 2")
    rho = sys.spectral_radius()
    if rho >= 1.0:
        raise ValueError(f"system not Schur stable (spectral radius {rho:.6g})")
    grid = np.linspace(0.0, np.pi, grid_size)
    gain = np.array([transfer_gain(sys, th) for th in grid])
    return FrequencyCurve(grid=grid, gain=gain)


def transform_realization(ctrl: Controller, L) -> Controller:
    """Change of controller coordinates xc -> L xc; preserves the
    closed-loop transfer function for any regular L."""
    n = ctrl.Ac.shape[0]
    L = _as_matrix(L, n, n, "L")
    s = np.linalg.svd(L, compute_uv=False)
    if s[-1] <= REGULARITY_RTOL * s[0]:
        cond = np.inf if s[-1] == 0 else s[0] / s[-1]
        raise ValueError(
            f"transformation matrix numerically singular (cond ~ {cond:.3g})")
    Linv = np.linalg.inv(L)
    return Controller(Ac=L @ ctrl.Ac @ Linv, Bc=L @ ctrl.Bc,
                      Cc=ctrl.Cc @ Linv, Dc=ctrl.Dc)
