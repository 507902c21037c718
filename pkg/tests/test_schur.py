"""Schur condensation of the effective system and eliminated-DOF reconstruction."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pimionet.dynamics import (FreeSystem, IntegratorConfig, MovingLoadScenario, effective_force,
                               moving_load_history, simulate)
from pimionet.fem import default_schur_nodes
from pimionet.schur import (block_effective_forces, condensed_force, free_positions, partition,
                            reconstruct_full, reconstruct_step)

from helpers import random_damped_system


def two_by_two():
    K = np.array([[4.0, 1.0], [1.0, 3.0]])
    fs = FreeSystem.from_matrices(np.zeros((2, 2)), np.zeros((2, 2)), K)
    return partition(fs, IntegratorConfig(0.1, 0.0), [0])


def random_split(rng, n):
    k = int(rng.integers(1, n + 1))
    return np.sort(rng.choice(n, size=k, replace=False))


class TestPartition:
    def test_hand_schur_complement(self):
        part = two_by_two()
        assert part.s_eff[0, 0] == pytest.approx(11.0 / 3.0, rel=1e-15)
        np.testing.assert_array_equal(part.eliminated, [1])

    def test_hand_condensed_solve(self):
        part = two_by_two()
        f_c = condensed_force(np.array([1.0]), np.array([2.0]), part)
        assert f_c[0] == pytest.approx(1.0 / 3.0, rel=1e-15)
        u_i = np.linalg.solve(part.s_eff, f_c)
        assert u_i[0] == pytest.approx(1.0 / 11.0, rel=1e-15)
        zero = (np.zeros(1),) * 3
        u_n, _, _ = reconstruct_step(part, u_i, zero, np.array([2.0]))
        assert u_n[0] == pytest.approx(7.0 / 11.0, rel=1e-14)

    def test_all_retained(self):
        fs = random_damped_system(np.random.default_rng(0), 5)
        cfg = IntegratorConfig(0.01, -0.05)
        part = partition(fs, cfg, range(5))
        assert part.eliminated.size == 0
        np.testing.assert_array_equal(part.s_eff, fs.k_eff(cfg))
        f = np.arange(5.0)
        assert condensed_force(f, np.zeros(0), part) is f
        state = (np.zeros(0),) * 3
        assert reconstruct_step(part, f, state, np.zeros(0)) is state

    @pytest.mark.parametrize("retained", [[], [0, 0], [7]])
    def test_invalid_sets(self, retained):
        fs = random_damped_system(np.random.default_rng(0), 4)
        with pytest.raises(ValueError):
            partition(fs, IntegratorConfig(), retained)

    @given(st.integers(0, 2**31), st.integers(2, 30))
    @settings(max_examples=100, deadline=None)
    def test_condensed_solve_matches_full(self, seed, n):
        rng = np.random.default_rng(seed)
        fs = random_damped_system(rng, n)
        cfg = IntegratorConfig(0.01, float(rng.uniform(-1 / 3, 0)), float(rng.uniform(1, 2.2)))
        I = random_split(rng, n)
        part = partition(fs, cfg, I)
        F = rng.standard_normal(n)
        full = np.linalg.solve(part.k_eff, F)
        f_c = condensed_force(F[I], F[part.eliminated], part)
        u_i = np.linalg.solve(part.s_eff, f_c)
        assert np.linalg.norm(u_i - full[I]) <= 1e-8 * np.linalg.norm(full[I])
        s = part.s_eff
        assert np.abs(s - s.T).max() <= 1e-10 * np.abs(s).max()


class TestBlockForces:
    def test_zero_state_newmark(self):
        rng = np.random.default_rng(1)
        fs = random_damped_system(rng, 5)
        part = partition(fs, IntegratorConfig(0.01, 0.0), [1, 3])
        f0, f1 = rng.standard_normal(5), rng.standard_normal(5)
        zi, zn = (np.zeros(2),) * 3, (np.zeros(3),) * 3
        fi, fn = block_effective_forces(zi, zn, f0, f1, part)
        np.testing.assert_array_equal(fi, f1[[1, 3]])
        np.testing.assert_array_equal(fn, f1[[0, 2, 4]])

    @given(st.integers(0, 2**31), st.integers(2, 12))
    @settings(max_examples=50, deadline=None)
    def test_split_identity(self, seed, n):
        rng = np.random.default_rng(seed)
        fs = random_damped_system(rng, n)
        cfg = IntegratorConfig(0.02, float(rng.uniform(-1 / 3, 0)), float(rng.uniform(1, 2.2)))
        part = partition(fs, cfg, random_split(rng, n))
        I, N = part.retained, part.eliminated
        u, v, a, f0, f1 = rng.standard_normal((5, n))
        full = effective_force(f0, f1, u, v, a, fs.M, fs.C, fs.K, cfg)
        fi, fn = block_effective_forces((u[I], v[I], a[I]), (u[N], v[N], a[N]), f0, f1, part)
        scale = np.abs(full).max()
        np.testing.assert_allclose(fi, full[I], rtol=0, atol=1e-12 * scale)
        np.testing.assert_allclose(fn, full[N], rtol=0, atol=1e-12 * scale)

    def test_scalar_two_dof_hand_case(self):
        M = np.diag([1.0, 2.0])
        K = np.array([[3.0, -1.0], [-1.0, 2.0]])
        fs = FreeSystem.from_matrices(M, np.zeros((2, 2)), K)
        cfg = IntegratorConfig(0.5, 0.0)
        part = partition(fs, cfg, [0])
        u, v, a = np.array([1.0, 2.0]), np.array([0.5, -1.0]), np.array([0.0, 4.0])
        f1 = np.array([10.0, 20.0])
        fi, fn = block_effective_forces((u[:1], v[:1], a[:1]), (u[1:], v[1:], a[1:]), np.zeros(2), f1, part)
        # beta = 1/4, dt = 1/2: M (16 u + 8 v + a) + F_{t+1}
        assert fi[0] == pytest.approx(10.0 + 1.0 * (16 * 1.0 + 8 * 0.5 + 0.0))
        assert fn[0] == pytest.approx(20.0 + 2.0 * (16 * 2.0 + 8 * -1.0 + 4.0))


class TestReconstruction:
    @given(st.integers(0, 2**31), st.integers(2, 15))
    @settings(max_examples=25, deadline=None)
    def test_exact_input_reconstruction(self, seed, n):
        rng = np.random.default_rng(seed)
        fs = random_damped_system(rng, n)
        cfg = IntegratorConfig(0.01, float(rng.uniform(-1 / 3, 0)))
        F = rng.standard_normal((80, n))
        # zero initial acceleration needs a load-free first step
        F[0] = 0.0
        ref = simulate(fs, F, cfg)
        part = partition(fs, cfg, random_split(rng, n))
        rec = reconstruct_full(part, ref.u[:, part.retained], F)
        assert np.linalg.norm(rec.u - ref.u) <= 1e-6 * np.linalg.norm(ref.u)

    def test_zero_loads_stay_zero(self):
        fs = random_damped_system(np.random.default_rng(2), 6)
        part = partition(fs, IntegratorConfig(), [0, 4])
        rec = reconstruct_full(part, np.zeros((30, 2)), np.zeros((30, 6)))
        assert np.all(rec.u == 0) and np.all(rec.v == 0) and np.all(rec.a == 0)

    def test_length_mismatch(self):
        fs = random_damped_system(np.random.default_rng(2), 3)
        part = partition(fs, IntegratorConfig(), [0])
        with pytest.raises(ValueError):
            reconstruct_full(part, np.zeros((5, 1)), np.zeros((6, 3)))

    def test_stretched_grid_consistent(self):
        rng = np.random.default_rng(3)
        fs = random_damped_system(rng, 8)
        F = rng.standard_normal((60, 8))
        F[0] = 0.0
        lam = 1.7795
        phys = simulate(fs, F, IntegratorConfig(0.01, -0.05))
        cfg = IntegratorConfig(0.01 * lam, -0.05, lam)
        part = partition(fs, cfg, [2, 5])
        rec = reconstruct_full(part, phys.u[:, [2, 5]], F)
        assert np.linalg.norm(rec.u - phys.u) <= 1e-8 * np.linalg.norm(phys.u)
        np.testing.assert_allclose(rec.times, lam * phys.times, rtol=1e-14)

    def test_beam_schur_nodes(self, preset_model, preset_system, preset_free):
        cfg = IntegratorConfig(0.01, -0.05)
        sc = MovingLoadScenario(15.0, (2e4,))
        loads = moving_load_history(preset_model, sc, cfg.dt, 2.0)
        ref = simulate(preset_system, loads, cfg)
        nodes = default_schur_nodes(preset_model, 5)
        I = free_positions(preset_free, preset_model.node_dofs(nodes))
        assert I.size == 15
        part = partition(preset_free, cfg, I)
        rec = reconstruct_full(part, ref.u[:, preset_free.free_dofs[I]], loads)
        for k in range(3):
            err = np.linalg.norm(rec.u[:, k::3] - ref.u[:, k::3]) / np.linalg.norm(ref.u[:, k::3])
            assert err < 1e-4

    def test_free_positions_skip_constrained(self, preset_model, preset_free):
        first = preset_model.loaded_chord[0]
        pos = free_positions(preset_free, preset_model.node_dofs([first]))
        assert pos.size == 1
        assert preset_free.free_dofs[pos[0]] == 3 * first + 2
