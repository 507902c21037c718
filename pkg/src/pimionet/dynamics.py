"""HHT-alpha integration of ``M a + C v + K u = F`` on a possibly stretched time grid.

The stretch factor ``lam`` maps the physical step ``h`` onto a grid step
``dt = lam * h``. Every formula here is written in terms of ``dt`` and ``lam`` so
that the same code runs on the native grid (``lam = 1``) and on the shared
reference grid used for training.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, lu_factor, lu_solve

from .fem import AssembledSystem, SingularSystemError, StructureModel, UY


def hht_params(alpha: float) -> tuple[float, float]:
    if not -1.0 / 3.0 - 1e-15 <= alpha <= 0.0:
        raise ValueError(f"HHT alpha must lie in [-1/3, 0], got {alpha}")
    return 0.25 * (1.0 - alpha) ** 2, 0.5 - alpha


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float = 0.01
    alpha: float = -0.05
    lam: float = 1.0
    beta: float = field(init=False)
    gamma: float = field(init=False)

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.lam <= 0:
            raise ValueError("stretch factor must be positive")
        beta, gamma = hht_params(self.alpha)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "gamma", gamma)

    def with_(self, **kw) -> "IntegratorConfig":
        args = {"dt": self.dt, "alpha": self.alpha, "lam": self.lam}
        args.update(kw)
        return IntegratorConfig(**args)

    def stiffness_coeffs(self) -> tuple[float, float, float]:
        """Scalars ``(cm, cc, ck)`` with ``K_eff = cm M + cc C + ck K``."""
        a, b, g, dt, lam = self.alpha, self.beta, self.gamma, self.dt, self.lam
        return lam**2 / (b * dt**2), (1 + a) * lam * g / (b * dt), 1 + a

    def force_coeffs(self) -> dict[str, float]:
        """Scalars multiplying each state term of the effective force."""
        a, b, g, dt, lam = self.alpha, self.beta, self.gamma, self.dt, self.lam
        return {
            "mu": lam**2 / (b * dt**2),
            "mv": lam / (b * dt),
            "ma": (1 - 2 * b) / (2 * b),
            "cv": a * g / b + g / b - 2 * a - 1,
            "ca": dt / lam * (a * g / (2 * b) + g / (2 * b) - a - 1),
            "cu": lam / dt * (g / b + a * g / b),
        }


@dataclass(frozen=True)
class MovingLoadScenario:
    velocity: float
    axle_loads: tuple[float, ...]
    axle_offsets: tuple[float, ...] = (0.0,)
    load_length: float = 2.0
    start: float = 0.0
    end: float | None = None

    def __post_init__(self):
        if self.velocity <= 0:
            raise ValueError("velocity must be positive")
        if self.load_length <= 0:
            raise ValueError("load length must be positive")
        if len(self.axle_loads) != len(self.axle_offsets):
            raise ValueError("axle_loads and axle_offsets differ in length")
        loads = np.asarray(self.axle_loads, dtype=float)
        if not np.all(np.isfinite(loads)) or np.any(loads < 0):
            raise ValueError("axle loads must be finite and non-negative")

    def exit_time(self, span_end: float) -> float:
        """Time at which the last patch leaves ``x = span_end``."""
        end = span_end if self.end is None else self.end
        return (end - self.start + max(self.axle_offsets) + self.load_length) / self.velocity


@dataclass(frozen=True, eq=False)
class ResponseHistory:
    times: np.ndarray
    u: np.ndarray
    v: np.ndarray
    a: np.ndarray
    dt: float
    lam: float = 1.0
    scenario: MovingLoadScenario | None = None

    @property
    def n_steps(self) -> int:
        return self.times.shape[0]


def moving_load_history(model: StructureModel, scenario: MovingLoadScenario,
                        dt: float, duration: float) -> np.ndarray:
    """Nodal force history ``(n_t, n_dof)`` on the grid ``0, dt, ..., duration``."""
    n_t = int(round(duration / dt)) + 1
    return loads_at(model, scenario, np.arange(n_t) * dt)


def loads_at(model: StructureModel, scenario: MovingLoadScenario, times: np.ndarray) -> np.ndarray:
    """Equivalent nodal forces of the moving patches at arbitrary physical times.

    Axle ``i`` has its patch front at ``start + v t - offset_i``; the patch covers
    ``[front - load_length, front]`` clipped to the path. Intensities are N/m,
    applied downward through linear (hat) weights on the loaded chord.
    """
    chord = list(model.loaded_chord)
    if len(chord) < 2:
        raise ValueError("model has no loaded chord")
    xs = np.array([model.nodes[n][0] for n in chord])
    order = np.argsort(xs)
    xs, chord = xs[order], [chord[i] for i in order]
    x0, x1 = xs[0], xs[-1]
    end = x1 if scenario.end is None else scenario.end
    if not (x0 - 1e-12 <= scenario.start <= x1 + 1e-12 and x0 - 1e-12 <= end <= x1 + 1e-12):
        raise ValueError("load path lies outside the loaded chord")
    times = np.asarray(times, dtype=float)
    F = np.zeros((times.size, model.n_dof))
    uy = np.array([model.dof_map[(n, UY)] for n in chord])
    for q, off in zip(scenario.axle_loads, scenario.axle_offsets):
        if q == 0.0:
            continue
        front = scenario.start + scenario.velocity * times - off
        lo = np.clip(front - scenario.load_length, scenario.start, end)
        hi = np.clip(front, scenario.start, end)
        for e in range(len(xs) - 1):
            xa, xb = xs[e], xs[e + 1]
            c0 = np.clip(lo, xa, xb)
            c1 = np.clip(hi, xa, xb)
            covered = c1 > c0
            if not covered.any():
                continue
            L = xb - xa
            # integral of the hat functions over [c0, c1]
            ib = ((c1 - xa) ** 2 - (c0 - xa) ** 2) / (2 * L)
            ia = (c1 - c0) - ib
            F[:, uy[e]] -= q * np.where(covered, ia, 0.0)
            F[:, uy[e + 1]] -= q * np.where(covered, ib, 0.0)
    return F


def effective_stiffness(M: np.ndarray, C: np.ndarray, K: np.ndarray, cfg: IntegratorConfig) -> np.ndarray:
    if not (M.shape == C.shape == K.shape):
        raise ValueError("M, C, K shapes differ")
    cm, cc, ck = cfg.stiffness_coeffs()
    return cm * M + cc * C + ck * K


def effective_force(F_t, F_t1, u_t, v_t, a_t, M, C, K, cfg: IntegratorConfig) -> np.ndarray:
    """Right-hand side of ``K_eff u_{t+1} = F_eff``; states may be batched on axis 0."""
    c = cfg.force_coeffs()
    m_part = c["mu"] * u_t + c["mv"] * v_t + c["ma"] * a_t
    c_part = c["cv"] * v_t + c["ca"] * a_t + c["cu"] * u_t
    return (F_t1 + cfg.alpha * (F_t - u_t @ K.T)
            + m_part @ M.T + c_part @ C.T)


def update_kinematics(u_t1, u_t, v_t, a_t, cfg: IntegratorConfig):
    """Acceleration and velocity at ``t+1`` from the displacement pair."""
    b, g, dt, lam = cfg.beta, cfg.gamma, cfg.dt, cfg.lam
    a_t1 = lam**2 / (b * dt**2) * (u_t1 - u_t - dt / lam * v_t) - (1 - 2 * b) / (2 * b) * a_t
    v_t1 = v_t + dt / lam * ((1 - g) * a_t + g * a_t1)
    return a_t1, v_t1


class Factorized:
    """Cached factorization of a square matrix (Cholesky when SPD, else LU)."""

    def __init__(self, A: np.ndarray):
        self.A = A
        try:
            self._chol = cho_factor(A)
            self._lu = None
        except LinAlgError:
            self._chol = None
            try:
                self._lu = lu_factor(A, check_finite=True)
            except (LinAlgError, ValueError) as exc:
                raise SingularSystemError("singular effective stiffness") from exc
            if np.any(np.abs(np.diag(self._lu[0])) == 0.0):
                raise SingularSystemError("singular effective stiffness")

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Solve for the last axis of ``b`` (batched rows allowed)."""
        rhs = b.T
        x = cho_solve(self._chol, rhs) if self._chol is not None else lu_solve(self._lu, rhs)
        return x.T

    def solve_transpose(self, b: np.ndarray) -> np.ndarray:
        if self._chol is not None:
            return self.solve(b)
        return lu_solve(self._lu, b.T, trans=1).T


@dataclass(frozen=True)
class FreeSystem:
    """Free-DOF blocks of an assembled system, the unit the integrator works on."""
    M: np.ndarray
    C: np.ndarray
    K: np.ndarray
    free_dofs: np.ndarray
    n_dof: int

    @classmethod
    def from_assembled(cls, system: AssembledSystem) -> "FreeSystem":
        return cls(system.free_block("M"), system.free_block("C"), system.free_block("K"),
                   system.free_dofs, system.n_dof)

    @classmethod
    def from_matrices(cls, M, C, K) -> "FreeSystem":
        M, C, K = (np.atleast_2d(np.asarray(x, dtype=float)) for x in (M, C, K))
        return cls(M, C, K, np.arange(M.shape[0]), M.shape[0])

    def k_eff(self, cfg: IntegratorConfig) -> np.ndarray:
        return effective_stiffness(self.M, self.C, self.K, cfg)


def check_static_modes(fs: FreeSystem) -> None:
    try:
        cho_factor(fs.K)
    except LinAlgError as exc:
        raise SingularSystemError("singular static mode") from exc


def initial_acceleration(fs: FreeSystem, F0, u0, v0) -> np.ndarray:
    try:
        return cho_solve(cho_factor(fs.M), (F0 - fs.C @ v0 - fs.K @ u0))
    except LinAlgError as exc:
        raise SingularSystemError("mass matrix is not positive definite") from exc


def hht_step(state, F_t, F_t1, fs: FreeSystem, k_eff: Factorized, cfg: IntegratorConfig):
    u_t, v_t, a_t = state
    f_eff = effective_force(F_t, F_t1, u_t, v_t, a_t, fs.M, fs.C, fs.K, cfg)
    u_t1 = k_eff.solve(f_eff)
    a_t1, v_t1 = update_kinematics(u_t1, u_t, v_t, a_t, cfg)
    return u_t1, v_t1, a_t1


def simulate(system: AssembledSystem | FreeSystem, loads: np.ndarray, cfg: IntegratorConfig,
             u0=None, v0=None, k_eff: Factorized | None = None,
             scenario: MovingLoadScenario | None = None, check_static: bool = True) -> ResponseHistory:
    """Integrate a full-DOF load history; constrained DOFs stay at zero.

    ``loads`` has shape ``(n_t, n_dof)``. Pass ``k_eff`` to reuse a factorization
    across scenarios that share ``dt`` and ``lam``.
    """
    fs = system if isinstance(system, FreeSystem) else FreeSystem.from_assembled(system)
    loads = np.atleast_2d(np.asarray(loads, dtype=float))
    if loads.ndim != 2 or loads.shape[1] != fs.n_dof:
        raise ValueError(f"load history must be (n_t, {fs.n_dof})")
    if check_static:
        check_static_modes(fs)
    f = fs.free_dofs
    n_t, n = loads.shape[0], f.size
    Ff = loads[:, f]
    u = np.zeros((n_t, n))
    v = np.zeros((n_t, n))
    a = np.zeros((n_t, n))
    if u0 is not None:
        u[0] = np.asarray(u0, dtype=float)[f] if np.size(u0) == fs.n_dof else u0
    if v0 is not None:
        v[0] = np.asarray(v0, dtype=float)[f] if np.size(v0) == fs.n_dof else v0
    a[0] = initial_acceleration(fs, Ff[0], u[0], v[0])
    if k_eff is None:
        k_eff = Factorized(fs.k_eff(cfg))
    state = (u[0], v[0], a[0])
    for t in range(n_t - 1):
        state = hht_step(state, Ff[t], Ff[t + 1], fs, k_eff, cfg)
        u[t + 1], v[t + 1], a[t + 1] = state

    def full(x):
        out = np.zeros((n_t, fs.n_dof))
        out[:, f] = x
        return out

    times = np.arange(n_t) * cfg.dt
    return ResponseHistory(times, full(u), full(v), full(a), cfg.dt, cfg.lam, scenario)


def equilibrium_residuals(fs: FreeSystem, history: ResponseHistory, loads: np.ndarray,
                          cfg: IntegratorConfig) -> np.ndarray:
    """Per-step ``||K_eff u_{t+1} - F_eff|| / max(1, ||F_eff||)`` using stored states."""
    f = fs.free_dofs
    u, v, a, F = history.u[:, f], history.v[:, f], history.a[:, f], loads[:, f]
    f_eff = effective_force(F[:-1], F[1:], u[:-1], v[:-1], a[:-1], fs.M, fs.C, fs.K, cfg)
    r = u[1:] @ fs.k_eff(cfg).T - f_eff
    return np.linalg.norm(r, axis=1) / np.maximum(1.0, np.linalg.norm(f_eff, axis=1))


def mechanical_energy(fs: FreeSystem, history: ResponseHistory) -> np.ndarray:
    f = fs.free_dofs
    u, v = history.u[:, f], history.v[:, f]
    return 0.5 * (np.einsum("ti,ij,tj->t", v, fs.M, v) + np.einsum("ti,ij,tj->t", u, fs.K, u))


def run_scenario(model: StructureModel, system: AssembledSystem, scenario: MovingLoadScenario,
                 cfg: IntegratorConfig, duration: float, k_eff: Factorized | None = None) -> ResponseHistory:
    loads = moving_load_history(model, scenario, cfg.dt, duration)
    return simulate(system, loads, cfg, k_eff=k_eff, scenario=scenario)


def node_component(history_u: np.ndarray, nodes: Sequence[int], component: int) -> np.ndarray:
    return history_u[:, [3 * n + component for n in nodes]]
