"""Schur-complement condensation of the effective HHT system.

Retained DOFs ``I`` carry the (predicted or measured) response; eliminated DOFs
``N`` are recovered step by step from the block equilibrium. All indices here
are positions inside the free-DOF vector of a :class:`FreeSystem`.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import Tensor, concatenate, linear_solve
from .dynamics import (Factorized, FreeSystem, IntegratorConfig, ResponseHistory,
                       effective_force, update_kinematics)
from .fem import SingularSystemError


class _Empty:
    """Stand-in solver for an empty eliminated set."""

    def solve(self, b):
        return b

    solve_transpose = solve


@dataclass(frozen=True, eq=False)
class SchurPartition:
    system: FreeSystem
    cfg: IntegratorConfig
    retained: np.ndarray
    eliminated: np.ndarray
    k_eff: np.ndarray
    s_eff: np.ndarray
    nn_solver: object

    def block(self, A: np.ndarray, rows: str, cols: str) -> np.ndarray:
        idx = {"I": self.retained, "N": self.eliminated}
        return A[np.ix_(idx[rows], idx[cols])]

    @property
    def kin(self) -> np.ndarray:
        return self.block(self.k_eff, "I", "N")

    @property
    def kni(self) -> np.ndarray:
        return self.block(self.k_eff, "N", "I")

    def solve_nn(self, x):
        return linear_solve(self.nn_solver, x)

    def row_blocks(self, rows: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(M, C, K)`` row blocks with columns ordered ``[I, N]``."""
        idx = {"I": self.retained, "N": self.eliminated}[rows]
        order = np.concatenate([self.retained, self.eliminated])
        fs = self.system
        return tuple(A[np.ix_(idx, order)] for A in (fs.M, fs.C, fs.K))


def partition(system: FreeSystem, cfg: IntegratorConfig, retained: Sequence[int]) -> SchurPartition:
    """Split the free DOFs into retained/eliminated sets and condense ``K_eff``."""
    n = system.M.shape[0]
    retained = np.asarray(retained, dtype=int)
    if retained.size == 0:
        raise ValueError("retained set is empty")
    if np.unique(retained).size != retained.size:
        raise ValueError("retained set has repeated indices")
    if retained.min() < 0 or retained.max() >= n:
        raise ValueError("retained index outside the free DOFs")
    eliminated = np.setdiff1d(np.arange(n), retained)
    k_eff = system.k_eff(cfg)
    kii = k_eff[np.ix_(retained, retained)]
    if eliminated.size == 0:
        return SchurPartition(system, cfg, retained, eliminated, k_eff, kii.copy(), _Empty())
    knn = k_eff[np.ix_(eliminated, eliminated)]
    solver = Factorized(knn)
    kin = k_eff[np.ix_(retained, eliminated)]
    s_eff = kii - kin @ solver.solve(k_eff[np.ix_(eliminated, retained)].T).T
    if not np.all(np.isfinite(s_eff)):
        raise SingularSystemError("singular eliminated block")
    return SchurPartition(system, cfg, retained, eliminated, k_eff, s_eff, solver)


def condensed_force(f_i, f_n, part: SchurPartition):
    """``F_C = F_I - K_IN K_NN^{-1} F_N``; accepts arrays or tensors batched on axis 0."""
    if part.eliminated.size == 0:
        return f_i
    return f_i - part.solve_nn(f_n) @ part.kin.T


def block_effective_forces(state_i, state_n, f_t, f_t1, part: SchurPartition):
    """Block rows of the effective force for retained and eliminated DOFs.

    ``state_*`` are ``(u, v, a)`` triples; ``f_t``/``f_t1`` are free-DOF load vectors.
    """
    cfg = part.cfg
    u, v, a = (_cat(x_i, x_n) for x_i, x_n in zip(state_i, state_n))
    out = []
    for rows, idx in (("I", part.retained), ("N", part.eliminated)):
        M, C, K = part.row_blocks(rows)
        out.append(effective_force(f_t[..., idx], f_t1[..., idx], u, v, a, M, C, K, cfg))
    return out[0], out[1]


def _cat(x_i, x_n):
    if isinstance(x_i, Tensor) or isinstance(x_n, Tensor):
        return concatenate([x_i, x_n], axis=-1)
    return np.concatenate([x_i, x_n], axis=-1)


def reconstruct_step(part: SchurPartition, u_i_t1, eliminated_state, f_n_eff):
    """Advance ``(u_N, v_N, a_N)`` one step given the retained displacement at ``t+1``."""
    u_n, v_n, a_n = eliminated_state
    if part.eliminated.size == 0:
        return eliminated_state
    u_n1 = part.solve_nn(f_n_eff - u_i_t1 @ part.kni.T)
    a_n1, v_n1 = update_kinematics(u_n1, u_n, v_n, a_n, part.cfg)
    return u_n1, v_n1, a_n1


def schur_sweep(part: SchurPartition, u_i, f, initial=None, detach_state: bool = False):
    """Run the retained-driven recurrence over a whole history.

    ``u_i`` is ``(..., n_t, |I|)`` and ``f`` the free-DOF loads ``(..., n_t, n_free)``.
    Returns per-step lists ``(states_i, states_n, residuals, condensed)`` where the
    residual at step ``t+1`` is ``S_eff u_I - F_C`` and ``condensed`` holds ``F_C``.
    With ``detach_state`` the
    carried velocity/acceleration/eliminated states are cut from the graph.
    """
    n_t = u_i.shape[-2]
    lead = u_i.shape[:-2]
    ni, nn = part.retained.size, part.eliminated.size

    if initial is None:
        state_i = (u_i[..., 0, :], np.zeros(lead + (ni,)), np.zeros(lead + (ni,)))
        state_n = (np.zeros(lead + (nn,)),) * 3
    else:
        state_i, state_n = initial
        state_i = (u_i[..., 0, :],) + tuple(state_i[1:])
    states_i, states_n, residuals, condensed = [state_i], [state_n], [], []
    for t in range(n_t - 1):
        si, sn = state_i, state_n
        if detach_state:
            si = tuple(x.detach() if isinstance(x, Tensor) and k else x for k, x in enumerate(si))
            sn = tuple(x.detach() if isinstance(x, Tensor) else x for x in sn)
        f_i_eff, f_n_eff = block_effective_forces(si, sn, f[..., t, :], f[..., t + 1, :], part)
        u_next = u_i[..., t + 1, :]
        f_c = condensed_force(f_i_eff, f_n_eff, part)
        condensed.append(f_c)
        residuals.append(u_next @ part.s_eff.T - f_c)
        a_next, v_next = update_kinematics(u_next, si[0], si[1], si[2], part.cfg)
        state_i = (u_next, v_next, a_next)
        state_n = reconstruct_step(part, u_next, sn, f_n_eff)
        states_i.append(state_i)
        states_n.append(state_n)
    return states_i, states_n, residuals, condensed


def reconstruct_full(part: SchurPartition, u_i: np.ndarray, loads: np.ndarray, initial=None) -> ResponseHistory:
    """Full-DOF history from a retained-DOF displacement history.

    ``u_i`` is ``(n_t, |I|)`` in free-DOF positions ``part.retained``; ``loads`` is
    the full-DOF force history ``(n_t, n_dof)``.
    """
    fs = part.system
    u_i = np.asarray(u_i, dtype=float)
    loads = np.asarray(loads, dtype=float)
    if u_i.shape[0] != loads.shape[0]:
        raise ValueError("u_I and load histories differ in length")
    f = loads[:, fs.free_dofs]
    states_i, states_n, _, _ = schur_sweep(part, u_i, f, initial=initial)
    n_t = u_i.shape[0]
    out = [np.zeros((n_t, fs.n_dof)) for _ in range(3)]
    gi = fs.free_dofs[part.retained]
    gn = fs.free_dofs[part.eliminated]
    for t in range(n_t):
        for k in range(3):
            out[k][t, gi] = states_i[t][k]
            out[k][t, gn] = states_n[t][k]
    times = np.arange(n_t) * part.cfg.dt
    return ResponseHistory(times, out[0], out[1], out[2], part.cfg.dt, part.cfg.lam)


def free_positions(fs: FreeSystem, global_dofs: Sequence[int]) -> np.ndarray:
    """Positions of (unconstrained) global DOFs inside the free-DOF vector."""
    lookup = {int(d): i for i, d in enumerate(fs.free_dofs)}
    return np.array([lookup[int(d)] for d in global_dofs if int(d) in lookup], dtype=int)
