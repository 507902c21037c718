"""Losses, strategies, error reports and the training loop."""
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pimionet import autodiff as ad
from pimionet.dynamics import IntegratorConfig, effective_force, simulate, update_kinematics
from pimionet.mionet import ArchConfig, gradients, load_checkpoint
from pimionet.schur import partition, reconstruct_full
from pimionet.training import (ErrorReport, PhysicsContext, TrainingConfig, TrainingDiverged, evaluate,
                               kinematic_operators, loss_dd, loss_pi_full, loss_pi_schur,
                               mean_squared_condensed, mean_squared_force, physics_loss,
                               physics_normalizer, relative_l2, save_run, sweep, train, write_sweep)

from helpers import random_damped_system


def small_arch(ds, hidden=8, layers=2, act="tanh", seed=0):
    return ArchConfig.rectangular(ds.branch_inputs.shape[1], hidden=hidden, layers=layers,
                                  n_out=ds.n_out, activation=act, seed=seed)


def loaded_history(fs, rng, n_t, cfg):
    F = rng.standard_normal((n_t, fs.n_dof))
    F[0] = 0.0
    return F, simulate(fs, F, cfg).u


def brute_force_schur_loss(fs, cfg, I, u_i, F):
    """Sweep the eliminated DOFs by solving their rows of the full step equation."""
    n = fs.n_dof
    N = np.setdiff1d(np.arange(n), I)
    K = fs.k_eff(cfg)
    u, v, a = np.zeros(n), np.zeros(n), np.zeros(n)
    total = 0.0
    for t in range(len(F) - 1):
        f = effective_force(F[t], F[t + 1], u, v, a, fs.M, fs.C, fs.K, cfg)
        u1 = np.zeros(n)
        u1[I] = u_i[t + 1]
        u1[N] = np.linalg.solve(K[np.ix_(N, N)], f[N] - K[np.ix_(N, I)] @ u_i[t + 1])
        r = (K @ u1 - f)[I]
        total += r @ r
        a1, v1 = update_kinematics(u1, u, v, a, cfg)
        u, v, a = u1, v1, a1
    return total / (len(F) - 1)


class TestDataLoss:
    def test_constant_offset(self):
        pred = np.ones((3, 5, 4, 2))
        assert loss_dd(pred, np.zeros_like(pred)) == 5 * 4 * 2

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            loss_dd(np.ones((2, 3, 4, 1)), np.ones((2, 3, 4, 2)))


class TestKinematicOperators:
    @given(st.integers(0, 2**31), st.floats(1.0, 2.2))
    @settings(max_examples=25, deadline=None)
    def test_match_recursive_update(self, seed, lam):
        rng = np.random.default_rng(seed)
        cfg = IntegratorConfig(0.02, -0.05, lam)
        u = rng.standard_normal((15, 3))
        u[0] = 0.0
        dv, da = kinematic_operators(15, cfg)
        v, a = np.zeros(3), np.zeros(3)
        for t in range(1, 15):
            a, v = update_kinematics(u[t], u[t - 1], v, a, cfg)
            scale = max(np.abs(dv @ u).max(), 1.0)
            np.testing.assert_allclose((dv @ u)[t], v, rtol=0, atol=1e-12 * scale)
            np.testing.assert_allclose((da @ u)[t], a, rtol=0, atol=1e-12 * np.abs(da @ u).max())

    def test_lower_triangular(self):
        dv, da = kinematic_operators(8, IntegratorConfig())
        assert np.all(np.triu(dv, 1) == 0) and np.all(np.triu(da, 1) == 0)


class TestPhysicsLoss:
    def test_zero_point_full(self):
        rng = np.random.default_rng(0)
        fs = random_damped_system(rng, 6)
        cfg = IntegratorConfig(0.01, -0.05, 1.4125)
        F, u = loaded_history(fs, rng, 40, cfg)
        norm = mean_squared_force(u[None], F[None], fs, cfg)
        assert loss_pi_full(u[None], F[None], fs, cfg) < 1e-12 * norm

    def test_zero_point_schur(self):
        rng = np.random.default_rng(1)
        fs = random_damped_system(rng, 7)
        cfg = IntegratorConfig(0.01, -0.05, 2.0926)
        F, u = loaded_history(fs, rng, 40, cfg)
        part = partition(fs, cfg, [0, 3, 5])
        ui = u[None][:, :, part.retained]
        norm = mean_squared_condensed(ui, F[None], part)
        assert loss_pi_schur(ui, F[None], part) < 1e-12 * norm

    def test_zero_prediction_is_load_energy(self):
        rng = np.random.default_rng(2)
        fs = random_damped_system(rng, 4)
        cfg = IntegratorConfig(0.01, -0.1)
        F = rng.standard_normal((2, 9, 4))
        expect = np.mean(np.sum((F[:, 1:] + cfg.alpha * F[:, :-1]) ** 2, axis=-1))
        assert loss_pi_full(np.zeros((2, 9, 4)), F, fs, cfg) == pytest.approx(expect, rel=1e-13)

    @given(st.integers(0, 2**31), st.integers(2, 8))
    @settings(max_examples=25, deadline=None)
    def test_schur_with_every_dof_retained_equals_full(self, seed, n):
        rng = np.random.default_rng(seed)
        fs = random_damped_system(rng, n)
        cfg = IntegratorConfig(0.01, -0.05, float(rng.uniform(1, 2.2)))
        u, F = rng.standard_normal((2, 2, 12, n))
        u[:, 0] = 0.0
        full = loss_pi_full(u, F, fs, cfg)
        cond = loss_pi_schur(u, F, partition(fs, cfg, range(n)))
        assert cond == pytest.approx(full, rel=1e-10)

    def test_schur_loss_matches_brute_force(self):
        rng = np.random.default_rng(3)
        fs = random_damped_system(rng, 6)
        cfg = IntegratorConfig(0.01, -0.05, 1.7795)
        I = np.array([1, 4])
        u_i = rng.standard_normal((10, 2)) * 1e-2
        u_i[0] = 0.0
        F = rng.standard_normal((10, 6))
        F[0] = 0.0
        got = loss_pi_schur(u_i[None], F[None], partition(fs, cfg, I))
        assert got == pytest.approx(brute_force_schur_loss(fs, cfg, I, u_i, F), rel=1e-9)

    def test_perturbation_is_causal(self):
        rng = np.random.default_rng(4)
        fs = random_damped_system(rng, 4)
        cfg = IntegratorConfig(0.01, -0.05)
        F = rng.standard_normal((1, 10, 4))
        u = rng.standard_normal((1, 10, 4))
        dv, da = kinematic_operators(10, cfg)

        def residuals(x):
            v, a = np.einsum("tj,bjn->btn", dv, x), np.einsum("tj,bjn->btn", da, x)
            f = effective_force(F[:, :-1], F[:, 1:], x[:, :-1], v[:, :-1], a[:, :-1], fs.M, fs.C, fs.K, cfg)
            return x[:, 1:] @ fs.k_eff(cfg).T - f

        base = residuals(u)
        bumped = u.copy()
        bumped[0, 6, 2] += 1.0
        diff = np.abs(residuals(bumped) - base).max(axis=-1)[0]
        assert np.all(diff[:5] == 0) and np.all(diff[5:] > 0)


class TestPhysicsGradients:
    """Finite differences through the equilibrium recurrence (4 DOF, 10 steps)."""

    def setup_method(self):
        rng = np.random.default_rng(5)
        self.fs = random_damped_system(rng, 4)
        self.cfg = IntegratorConfig(0.05, -0.05, 1.4125)
        self.x = rng.standard_normal((10, 3))
        self.F = rng.standard_normal((2, 10, 4))
        self.params = {"W": rng.standard_normal((3, 8)) * 0.3, "b": rng.standard_normal(8) * 0.1}

    def history(self, p):
        h = ad.tanh(self.x @ p["W"] + p["b"])
        return h.reshape((10, 2, 4)).transpose((1, 0, 2))

    def check(self, loss):
        _, g = gradients(self.params, lambda p: loss(self.history(p)))
        h = 1e-6
        for k, v in self.params.items():
            for i in np.ndindex(v.shape):
                up, dn = dict(self.params), dict(self.params)
                up[k], dn[k] = v.copy(), v.copy()
                up[k][i] += h
                dn[k][i] -= h
                fd = (float(loss(self.history(up))) - float(loss(self.history(dn)))) / (2 * h)
                assert abs(g[k][i] - fd) <= 1e-4 * max(abs(fd), 1e-8), (k, i, g[k][i], fd)

    def test_full_recurrence(self):
        self.check(lambda u: loss_pi_full(u, self.F, self.fs, self.cfg))

    def test_condensed_recurrence(self):
        part = partition(self.fs, self.cfg, [0, 2])
        self.check(lambda u: loss_pi_schur(u[:, :, [0, 2]], self.F, part))

    def test_detached_mode_differs(self):
        _, g1 = gradients(self.params, lambda p: loss_pi_full(self.history(p), self.F, self.fs, self.cfg))
        _, g2 = gradients(self.params, lambda p: loss_pi_full(self.history(p), self.F, self.fs, self.cfg,
                                                               detach=True))
        assert not np.allclose(g1["W"], g2["W"])


class TestDatasetPhysics:
    def test_zero_point_on_dataset_grid(self, small_dataset):
        ds = small_dataset
        ctx = PhysicsContext(ds, ds.extra["schur_nodes"])
        for s in (0, ds.n_samples - 1):
            cfg = ctx.cfg(ds.lam[s])
            u = simulate(ctx.fs, ds.loads[s], cfg).u[None][:, :, ctx.fs.free_dofs]
            norm = mean_squared_force(u, ctx.loads[s:s + 1], ctx.fs, cfg)
            assert loss_pi_full(u, ctx.loads[s:s + 1], ctx.fs, cfg) < 1e-12 * norm
            part = ctx.partition(ds.lam[s])
            ui = u[:, :, ctx.retained]
            norm = mean_squared_condensed(ui, ctx.loads[s:s + 1], part)
            assert loss_pi_schur(ui, ctx.loads[s:s + 1], part) < 1e-12 * norm

    def test_positions_gather_free_dofs(self, small_dataset):
        ds = small_dataset
        ctx = PhysicsContext(ds)
        flat = ds.targets.reshape(ds.n_samples, ds.targets.shape[1], -1)
        got = ctx.free_history(ds.targets, ctx.full_pos)
        np.testing.assert_array_equal(got, flat[:, :, ctx.fs.free_dofs])

    def test_normalizer_positive_and_batch_loss_consistent(self, small_dataset):
        ds = small_dataset
        ctx = PhysicsContext(ds)
        assert physics_normalizer(ds, ctx, False) > 0
        idx = ds.train_idx
        val = physics_loss(np.zeros(ds.targets[idx].shape), idx, ds.lam, ctx, False, False)
        ref = 0.0
        for j, s in enumerate(idx):
            ref += loss_pi_full(np.zeros((1,) + ctx.loads.shape[1:]), ctx.loads[s:s + 1], ctx.fs,
                                ctx.cfg(ds.lam[s])) / len(idx)
        assert float(val) == pytest.approx(ref, rel=1e-12)

    def test_missing_schur_node(self, small_dataset):
        with pytest.raises(ValueError, match="not in the dataset"):
            PhysicsContext(small_dataset, [999])


class TestErrors:
    def test_ten_percent_offset(self):
        true = np.random.default_rng(0).standard_normal((3, 4, 5, 2))
        err, zero = relative_l2(1.1 * true, true)
        np.testing.assert_allclose(err, 0.1, rtol=1e-12)
        assert not zero.any()

    def test_zero_reference_flagged(self):
        true = np.zeros((1, 3, 2, 1))
        err, zero = relative_l2(np.full_like(true, 2.0), true)
        assert zero.all() and err[0, 0] == pytest.approx(np.sqrt(6) * 2)

    def test_report_summary(self):
        errs = np.random.default_rng(1).uniform(size=(37, 3))
        rep = ErrorReport("test", ["U_x", "U_y", "R_z"], errs, np.zeros_like(errs, bool), np.arange(37))
        for c in rep.components:
            assert sum(rep.histogram()[c]["counts"]) == 37
        np.testing.assert_array_equal(rep.component("U_y"), errs[:, 1])
        back = ErrorReport.from_json(rep.to_json())
        np.testing.assert_array_equal(back.errors, errs)
        assert back.to_json()["mean"] == rep.to_json()["mean"]


class TestConfig:
    @pytest.mark.parametrize("kw, msg", [
        ({"strategy": "pi-only"}, "unknown strategy"),
        ({"strategy": "dd-pi-full", "w1": 0.0, "w2": 0.0}, "both zero"),
        ({"strategy": "dd-full", "w1": 0.0}, "both zero"),
        ({"batch_size": 0}, "positive"),
        ({"lr": 0.0}, "positive"),
        ({"gradient_mode": "sometimes"}, "gradient mode"),
        ({"w1": -1.0}, "non-negative"),
    ])
    def test_rejected(self, kw, msg):
        with pytest.raises(ValueError, match=msg):
            TrainingConfig(**kw)


class TestTraining:
    def test_deterministic(self, small_dataset):
        arch = small_arch(small_dataset)
        cfg = TrainingConfig(strategy="dd-pi-full", epochs=3, batch_size=2, lr=1e-3)
        a, b = train(small_dataset, arch, cfg), train(small_dataset, arch, cfg)
        for k in a.params:
            assert a.params[k].tobytes() == b.params[k].tobytes()
        assert a.curves == b.curves

    def test_zero_physics_weight_is_data_driven(self, small_dataset):
        arch = small_arch(small_dataset)
        base = dict(epochs=4, batch_size=2, lr=1e-3)
        dd = train(small_dataset, arch, TrainingConfig(strategy="dd-full", **base), evaluate_split=None)
        pi = train(small_dataset, arch, TrainingConfig(strategy="dd-pi-full", w2=0.0, **base),
                   evaluate_split=None)
        for k in dd.params:
            assert dd.params[k].tobytes() == pi.params[k].tobytes()

    def test_loss_drops(self, small_dataset):
        arch = small_arch(small_dataset, hidden=16)
        res = train(small_dataset, arch, TrainingConfig(epochs=600, batch_size=2, lr=5e-3),
                    evaluate_split=None)
        assert res.curves[-1][1] * 10 <= res.curves[0][1]

    @pytest.mark.parametrize("strategy", ["dd-pi-full", "dd-pi-schur", "dd-schur"])
    def test_strategies_run(self, small_dataset, strategy, tmp_path):
        arch = small_arch(small_dataset)
        res = train(small_dataset, arch, TrainingConfig(strategy=strategy, epochs=2, batch_size=2))
        assert len(res.curves) == 2 and np.isfinite(res.curves[-1][1])
        if strategy != "dd-schur":
            assert res.w2 > 0 and res.curves[-1][3] > 0
        assert res.report.errors.shape == (small_dataset.test_idx.size, 3)
        if strategy.endswith("schur"):
            assert res.report.postprocessed is not None
            assert res.report.timings["postprocessing_seconds_per_sample"] >= 0
        out = save_run(res, tmp_path / strategy)
        header = (out / "loss_curve.csv").read_text().splitlines()[0]
        assert header == "epoch,total,data,physics"
        assert (out / "timing.json").exists() and (out / "error_report.json").exists()

    def test_schur_reconstruction_of_truth(self, small_dataset):
        """Feeding exact retained histories rebuilds the rest to resampling accuracy."""
        ds = small_dataset
        cfg = TrainingConfig(strategy="dd-schur")
        ctx = PhysicsContext(ds, ds.extra["schur_nodes"])
        s = int(ds.test_idx[0])
        u = simulate(ctx.fs, ds.loads[s], ctx.cfg(ds.lam[s])).u
        rec = reconstruct_full(ctx.partition(ds.lam[s]), u[:, ctx.fs.free_dofs[ctx.retained]], ds.loads[s])
        assert np.linalg.norm(rec.u - u) <= 1e-8 * np.linalg.norm(u)
        assert cfg.schur

    def test_batch_larger_than_training_split(self, small_dataset):
        with pytest.raises(ValueError, match="exceeds"):
            train(small_dataset, small_arch(small_dataset), TrainingConfig(batch_size=1000, epochs=1))

    def test_architecture_mismatch(self, small_dataset):
        arch = ArchConfig.rectangular(7, hidden=4, layers=2)
        with pytest.raises(ValueError, match="architecture"):
            train(small_dataset, arch, TrainingConfig(batch_size=2, epochs=1))

    def test_divergence_keeps_last_good(self, small_dataset, tmp_path):
        bad = small_dataset.branch_inputs.copy()
        bad[small_dataset.train_idx, 0] = np.nan
        ds = replace(small_dataset, branch_inputs=bad)
        arch = small_arch(ds)
        with pytest.raises(TrainingDiverged) as info:
            train(ds, arch, TrainingConfig(epochs=2, batch_size=2), out_dir=tmp_path)
        assert info.value.epoch == 1
        params, _, meta = load_checkpoint(tmp_path / "checkpoints" / "last_good")
        assert meta["diverged"] and meta["epoch"] == 0
        assert all(np.isfinite(v).all() for v in params.values())

    def test_evaluate_reports_inference_time(self, small_dataset):
        arch = small_arch(small_dataset)
        res = train(small_dataset, arch, TrainingConfig(epochs=1, batch_size=2), evaluate_split=None)
        ev = evaluate(res.params, arch, small_dataset, res.config, "train")
        assert ev.report.split == "train"
        assert ev.report.timings["inference_seconds_per_sample"] > 0
        assert ev.predictions.shape == small_dataset.targets[small_dataset.train_idx].shape


class TestSweep:
    def test_empty_grid(self, small_dataset):
        with pytest.raises(ValueError, match="empty sweep grid"):
            sweep(small_dataset, {}, TrainingConfig())
        with pytest.raises(ValueError, match="empty sweep grid"):
            sweep(small_dataset, {"neurons": []}, TrainingConfig())

    def test_unknown_axis(self, small_dataset):
        with pytest.raises(ValueError, match="unknown sweep axes"):
            sweep(small_dataset, {"dropout": [0.1]}, TrainingConfig())

    def test_failed_point_recorded(self, small_dataset, tmp_path):
        rows = sweep(small_dataset, {"batch_size": [2, 1000]}, TrainingConfig(epochs=2),
                     neurons=4, layers=2)
        assert rows[0]["status"] == "ok" and np.isfinite(rows[0]["mean_rel_L2"])
        assert rows[1]["status"].startswith("failed") and np.isnan(rows[1]["mean_rel_L2"])
        write_sweep(tmp_path / "sweep.csv", rows)
        lines = (tmp_path / "sweep.csv").read_text().splitlines()
        assert lines[0].startswith("batch_size,mean_rel_L2") and len(lines) == 3
