"""Training strategies, losses and error reporting for the operator network.

Strategies
    dd-full      data loss on every node
    dd-pi-full   data loss on every node + full-domain equilibrium residual
    dd-pi-schur  data loss on the retained nodes + condensed equilibrium residual
    dd-schur     data loss on the retained nodes; full field rebuilt afterwards

Data losses are computed in scaled units, equilibrium losses in physical units.
"""
from __future__ import annotations

import csv
import itertools
import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteError, Tensor
from .data import COMPONENTS, Dataset, ScalerParams, regenerate_kinematics
from .dynamics import FreeSystem, IntegratorConfig, effective_force
from .mionet import (AdamState, ArchConfig, Predictor, adam_update, forward, gradients,
                     init_params, save_checkpoint)
from .schur import SchurPartition, free_positions, partition, reconstruct_full, schur_sweep

STRATEGIES = ("dd-full", "dd-pi-full", "dd-pi-schur", "dd-schur")
GRADIENT_MODES = ("through", "detached")


class TrainingDiverged(RuntimeError):
    """Non-finite loss; ``params`` holds the last finite parameters."""

    def __init__(self, message: str, params: dict, epoch: int):
        super().__init__(message)
        self.params = params
        self.epoch = epoch


@dataclass(frozen=True)
class TrainingConfig:
    strategy: str = "dd-full"
    w1: float = 1.0
    w2: float | None = None          # None: inverse mean squared effective force
    lr: float = 5e-4
    batch_size: int = 20
    epochs: int = 5000
    seed: int = 0
    schur_nodes: tuple[int, ...] | None = None
    gradient_mode: str = "through"
    checkpoint_every: int = 0
    deterministic: bool = True

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; choose from {', '.join(STRATEGIES)}")
        if self.gradient_mode not in GRADIENT_MODES:
            raise ValueError(f"unknown gradient mode {self.gradient_mode!r}")
        if self.w1 < 0 or (self.w2 is not None and self.w2 < 0):
            raise ValueError("loss weights must be non-negative")
        if self.w1 == 0 and (self.w2 == 0 or not self.physics):
            raise ValueError("loss weights are both zero")
        if self.batch_size < 1 or self.epochs < 0 or self.lr <= 0:
            raise ValueError("batch size, epochs and learning rate must be positive")

    @property
    def physics(self) -> bool:
        return self.strategy in ("dd-pi-full", "dd-pi-schur")

    @property
    def schur(self) -> bool:
        return self.strategy in ("dd-pi-schur", "dd-schur")


# -- losses ---------------------------------------------------------------------

def loss_dd(pred, target):
    """Mean over samples of the squared L2 norm over (time, node, component)."""
    if tuple(pred.shape) != tuple(np.shape(target)):
        raise ValueError(f"prediction {tuple(pred.shape)} and target {np.shape(target)} differ")
    diff = pred - target
    return (diff * diff).sum() / pred.shape[0]


def kinematic_operators(n_t: int, cfg: IntegratorConfig) -> tuple[np.ndarray, np.ndarray]:
    """Matrices ``Dv``, ``Da`` with ``v = Dv u`` and ``a = Da u`` along time.

    The stretched kinematic update is linear with constant coefficients, so from
    rest (``v0 = a0 = 0``) velocity and acceleration are fixed lower-triangular
    maps of the displacement history.
    """
    return regenerate_kinematics(np.eye(n_t), cfg)


def _history_residual(u, loads, fs: FreeSystem, cfg: IntegratorConfig, detach: bool = False):
    n_t = u.shape[1]
    dv, da = kinematic_operators(n_t, cfg)
    src = u.detach() if detach and isinstance(u, Tensor) else u
    v = ad.einsum("tj,bjn->btn", dv, src) if isinstance(src, Tensor) else np.einsum("tj,bjn->btn", dv, src)
    a = ad.einsum("tj,bjn->btn", da, src) if isinstance(src, Tensor) else np.einsum("tj,bjn->btn", da, src)
    f_eff = effective_force(loads[:, :-1], loads[:, 1:], u[:, :-1], v[:, :-1], a[:, :-1],
                            fs.M, fs.C, fs.K, cfg)
    return u[:, 1:] @ fs.k_eff(cfg).T - f_eff, f_eff


def loss_pi_full(u, loads, fs: FreeSystem, cfg: IntegratorConfig, detach: bool = False):
    """Mean over samples and steps of ``||K_eff u_{t+1} - F_eff||^2``.

    ``u`` and ``loads`` are free-DOF histories ``(B, n_t, n_free)`` in physical
    units; the initial velocity and acceleration are zero.
    """
    r, _ = _history_residual(u, loads, fs, cfg, detach)
    return (r * r).sum() / (r.shape[0] * r.shape[1])


def loss_pi_schur(u_i, loads, part: SchurPartition, detach: bool = False):
    """Mean over samples and steps of ``||S_eff u_I - F_C||^2`` along the retained-driven sweep."""
    _, _, residuals, _ = schur_sweep(part, u_i, loads, detach_state=detach)
    total = 0.0
    for r in residuals:
        total = total + (r * r).sum()
    return total / (u_i.shape[0] * len(residuals))


def mean_squared_force(u, loads, fs: FreeSystem, cfg: IntegratorConfig) -> float:
    _, f_eff = _history_residual(np.asarray(u), np.asarray(loads), fs, cfg)
    return float((f_eff**2).sum(axis=-1).mean())


def mean_squared_condensed(u_i, loads, part: SchurPartition) -> float:
    _, _, _, fc = schur_sweep(part, np.asarray(u_i), np.asarray(loads))
    return float(np.mean([(f**2).sum(axis=-1).mean() for f in fc]))


# -- physics context --------------------------------------------------------

class PhysicsContext:
    """Free-DOF system, DOF maps and per-stretch-factor caches for one dataset."""

    def __init__(self, ds: Dataset, schur_nodes: Sequence[int] | None = None):
        if ds.K is None or ds.M is None or ds.C is None or ds.loads is None:
            raise ValueError("dataset carries no system matrices or load histories")
        n_dof = ds.K.shape[0]
        free = np.setdiff1d(np.arange(n_dof), ds.constrained_dofs)
        ix = np.ix_(free, free)
        self.fs = FreeSystem(ds.M[ix], ds.C[ix], ds.K[ix], free, n_dof)
        self.alpha = ds.alpha
        self.dt = ds.dt
        self.loads = ds.loads[:, :, free]
        nodes = list(ds.extra.get("nodes", range(ds.coords.shape[0])))
        comps = [COMPONENTS.index(c) for c in ds.extra.get("components", COMPONENTS)]
        self.n_out = len(comps)
        # flat position (node_index * n_out + comp_index) of every free DOF in the output
        gdof = {3 * n + c: (i, j) for i, n in enumerate(nodes) for j, c in enumerate(comps)}
        self.full_pos = self._positions(gdof, free, len(comps))
        self.schur_nodes = list(schur_nodes) if schur_nodes is not None else None
        if self.schur_nodes is not None:
            local = {n: i for i, n in enumerate(nodes)}
            missing = [n for n in self.schur_nodes if n not in local]
            if missing:
                raise ValueError(f"retained nodes {missing} are not in the dataset node set")
            self.schur_index = [local[n] for n in self.schur_nodes]
            gd = [3 * n + c for n in self.schur_nodes for c in comps]
            sub = {3 * n + c: (i, j) for i, n in enumerate(self.schur_nodes) for j, c in enumerate(comps)}
            free_gd = [d for d in gd if d in set(free.tolist())]
            self.retained = free_positions(self.fs, free_gd)
            self.schur_pos = np.array([sub[d][0] * len(comps) + sub[d][1] for d in free_gd], dtype=int)
        self._cfg: dict[float, IntegratorConfig] = {}
        self._parts: dict[float, SchurPartition] = {}

    @staticmethod
    def _positions(gdof, free, n_out):
        missing = [int(d) for d in free if int(d) not in gdof]
        if missing:
            raise ValueError(f"free DOFs {missing[:5]} are not predicted by the network")
        return np.array([gdof[int(d)][0] * n_out + gdof[int(d)][1] for d in free], dtype=int)

    def cfg(self, lam: float) -> IntegratorConfig:
        key = float(lam)
        if key not in self._cfg:
            self._cfg[key] = IntegratorConfig(self.dt, self.alpha, key)
        return self._cfg[key]

    def partition(self, lam: float) -> SchurPartition:
        key = float(lam)
        if key not in self._parts:
            self._parts[key] = partition(self.fs, self.cfg(key), self.retained)
        return self._parts[key]

    def free_history(self, pred, positions):
        """Gather free-DOF columns from ``(B, T, S, K)`` physical predictions."""
        b, t = pred.shape[:2]
        return pred.reshape(b, t, -1)[:, :, positions]


def _lam_groups(lam: np.ndarray) -> list[np.ndarray]:
    keys = np.unique(lam)
    return [np.flatnonzero(lam == k) for k in keys]


def physics_loss(pred_phys, idx: np.ndarray, lam: np.ndarray, ctx: PhysicsContext, schur: bool,
                 detach: bool):
    """Equilibrium loss of a batch, evaluated per stretch-factor group and averaged."""
    total = 0.0
    n = len(idx)
    for g in _lam_groups(lam[idx]):
        f = ctx.loads[idx[g]]
        if schur:
            u = ctx.free_history(pred_phys[g], ctx.schur_pos)
            val = loss_pi_schur(u, f, ctx.partition(lam[idx[g[0]]]), detach)
        else:
            u = ctx.free_history(pred_phys[g], ctx.full_pos)
            val = loss_pi_full(u, f, ctx.fs, ctx.cfg(lam[idx[g[0]]]), detach)
        total = total + val * (len(g) / n)
    return total


def physics_normalizer(ds: Dataset, ctx: PhysicsContext, schur: bool, idx: np.ndarray | None = None) -> float:
    """Mean squared (condensed) effective force of the ground truth over ``idx``."""
    idx = ds.train_idx if idx is None else np.asarray(idx)
    pred = ds.targets
    if schur:
        pred = pred[:, :, ctx.schur_index]
    vals, weights = [], []
    for g in _lam_groups(ds.lam[idx]):
        sel = idx[g]
        lam = ds.lam[sel[0]]
        if schur:
            u = ctx.free_history(pred[sel], ctx.schur_pos)
            vals.append(mean_squared_condensed(u, ctx.loads[sel], ctx.partition(lam)))
        else:
            u = ctx.free_history(pred[sel], ctx.full_pos)
            vals.append(mean_squared_force(u, ctx.loads[sel], ctx.fs, ctx.cfg(lam)))
        weights.append(len(sel))
    return float(np.average(vals, weights=weights))


# -- error reporting ---------------------------------------------------------

def relative_l2(pred: np.ndarray, true: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample, per-component ``||pred - true|| / ||true||`` over (time, node).

    Where ``||true|| == 0`` the absolute error is returned and flagged.
    """
    pred, true = np.asarray(pred, float), np.asarray(true, float)
    if pred.shape != true.shape:
        raise ValueError("prediction and truth shapes differ")
    n, k = pred.shape[0], pred.shape[-1]
    diff = np.linalg.norm((pred - true).reshape(n, -1, k), axis=1)
    ref = np.linalg.norm(true.reshape(n, -1, k), axis=1)
    zero = ref == 0.0
    return np.where(zero, diff, diff / np.where(zero, 1.0, ref)), zero


@dataclass
class ErrorReport:
    split: str
    components: list[str]
    errors: np.ndarray                  # (n_samples, n_out)
    zero_norm: np.ndarray
    sample_index: np.ndarray
    node_set: str = "full"
    grid_factor: int = 1
    timings: dict = field(default_factory=dict)
    postprocessed: "ErrorReport | None" = None
    bins: int = 20

    @property
    def mean(self) -> np.ndarray:
        return self.errors.mean(axis=0)

    @property
    def std(self) -> np.ndarray:
        return self.errors.std(axis=0)

    @property
    def max(self) -> np.ndarray:
        return self.errors.max(axis=0)

    def histogram(self) -> dict:
        out = {}
        for j, c in enumerate(self.components):
            counts, edges = np.histogram(self.errors[:, j], bins=self.bins)
            out[c] = {"counts": counts.tolist(), "edges": edges.tolist()}
        return out

    def component(self, name: str) -> np.ndarray:
        return self.errors[:, self.components.index(name)]

    def to_json(self) -> dict:
        d = {
            "split": self.split, "node_set": self.node_set, "grid_factor": self.grid_factor,
            "components": self.components, "n_samples": int(self.errors.shape[0]),
            "sample_index": self.sample_index.tolist(), "errors": self.errors.tolist(),
            "zero_norm": self.zero_norm.tolist(),
            "mean": dict(zip(self.components, self.mean.tolist())),
            "std": dict(zip(self.components, self.std.tolist())),
            "max": dict(zip(self.components, self.max.tolist())),
            "histogram": self.histogram(), "timings": self.timings,
        }
        if self.postprocessed is not None:
            d["postprocessed"] = self.postprocessed.to_json()
        return d

    @classmethod
    def from_json(cls, d: Mapping) -> "ErrorReport":
        post = d.get("postprocessed")
        return cls(d["split"], list(d["components"]), np.asarray(d["errors"], float),
                   np.asarray(d["zero_norm"], bool), np.asarray(d["sample_index"], int),
                   d.get("node_set", "full"), int(d.get("grid_factor", 1)), dict(d.get("timings", {})),
                   cls.from_json(post) if post else None)


@dataclass
class Evaluation:
    report: ErrorReport
    predictions: np.ndarray                  # physical, on the model's node set
    reconstructed: np.ndarray | None = None  # physical, every dataset node (Schur strategies)


def model_nodes(ds: Dataset, cfg: TrainingConfig) -> tuple[list[int] | None, list[int]]:
    """Schur node ids (or None) and their positions in the dataset node list."""
    if not cfg.schur:
        return None, list(range(ds.coords.shape[0]))
    nodes = cfg.schur_nodes if cfg.schur_nodes is not None else ds.extra.get("schur_nodes")
    if nodes is None:
        raise ValueError("Schur strategy needs a retained node set")
    ds_nodes = list(ds.extra.get("nodes", range(ds.coords.shape[0])))
    missing = [n for n in nodes if n not in ds_nodes]
    if missing:
        raise ValueError(f"retained nodes {missing} are not in the dataset")
    return list(nodes), [ds_nodes.index(n) for n in nodes]


def evaluate(params: Mapping[str, np.ndarray], arch: ArchConfig, ds: Dataset, cfg: TrainingConfig,
             split: str = "test", scalers: ScalerParams | None = None, grid_factor: int = 1,
             reconstruct: bool | None = None, ctx: PhysicsContext | None = None) -> Evaluation:
    """Relative L2 errors in physical units on ``split``.

    ``grid_factor`` only tags the report; pass a dataset generated on the finer
    grid together with the training ``scalers``. Schur strategies also rebuild
    the full field from the retained-node predictions when ``reconstruct``.
    """
    scalers = ds.scalers if scalers is None else scalers
    idx = ds.split(split)
    schur_nodes, pos = model_nodes(ds, cfg)
    coords = scalers.coords(ds.coords[pos])
    times = scalers.times(ds.time_grid)
    t0 = time.perf_counter()
    predictor = Predictor(params, arch, coords, times, out_scale=scalers.out_scale)
    setup = time.perf_counter() - t0
    t0 = time.perf_counter()
    pred = predictor(scalers.branch(ds.branch_inputs[idx]))
    infer = (time.perf_counter() - t0) / max(len(idx), 1)
    true = ds.targets[idx][:, :, pos]
    err, zero = relative_l2(pred, true)
    comps = list(ds.extra.get("components", COMPONENTS))[: ds.n_out]
    report = ErrorReport(split, comps, err, zero, idx, "schur" if cfg.schur else "full", grid_factor,
                         {"inference_seconds_per_sample": infer, "trunk_setup_seconds": setup})
    out = Evaluation(report, pred)
    if reconstruct is None:
        reconstruct = cfg.schur
    if cfg.schur and reconstruct:
        ctx = ctx or PhysicsContext(ds, schur_nodes)
        t0 = time.perf_counter()
        full = np.zeros((len(idx),) + ds.targets.shape[1:])
        for i, s in enumerate(idx):
            u_i = pred[i].reshape(pred.shape[1], -1)[:, ctx.schur_pos]
            hist = reconstruct_full(ctx.partition(ds.lam[s]), u_i, ds.loads[s])
            full[i] = hist.u.reshape(hist.n_steps, -1, 3)[:, ds.extra.get("nodes", slice(None))][
                :, :, [COMPONENTS.index(c) for c in comps]]
        post = (time.perf_counter() - t0) / max(len(idx), 1)
        perr, pzero = relative_l2(full, ds.targets[idx])
        report.postprocessed = ErrorReport(split, comps, perr, pzero, idx, "full-reconstructed", grid_factor,
                                           {"postprocessing_seconds_per_sample": post})
        report.timings["postprocessing_seconds_per_sample"] = post
        out.reconstructed = full
    return out


# -- training loop ------------------------------------------------------------

@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    arch: ArchConfig
    config: TrainingConfig
    curves: list[tuple[int, float, float, float]]
    train_seconds: float
    w2: float
    report: ErrorReport | None = None
    checkpoints: list[str] = field(default_factory=list)

    def timings(self) -> dict:
        t = {"train_minutes": self.train_seconds / 60.0}
        if self.report is not None:
            t["inference_minutes_per_sample"] = self.report.timings["inference_seconds_per_sample"] / 60.0
            post = self.report.timings.get("postprocessing_seconds_per_sample")
            t["postprocessing_minutes_per_sample"] = None if post is None else post / 60.0
        return t


def _batches(rng: np.random.Generator, idx: np.ndarray, size: int) -> Iterable[np.ndarray]:
    perm = rng.permutation(idx)
    for start in range(0, perm.size, size):
        yield np.sort(perm[start:start + size])


def train(ds: Dataset, arch: ArchConfig, cfg: TrainingConfig, out_dir: str | Path | None = None,
          evaluate_split: str | None = "test", progress=None) -> TrainResult:
    """Seeded mini-batch Adam on ``w1 * data + w2 * physics``.

    Aborts with :class:`TrainingDiverged` (after writing the last good
    checkpoint when ``out_dir`` is set) if the loss stops being finite.
    """
    train_idx = ds.train_idx
    if train_idx.size == 0:
        raise ValueError("empty training split")
    if cfg.batch_size > train_idx.size:
        raise ValueError(f"batch size {cfg.batch_size} exceeds the {train_idx.size} training samples")
    schur_nodes, pos = model_nodes(ds, cfg)
    if arch.n_out != ds.n_out or arch.branch_widths[0] != ds.branch_inputs.shape[1]:
        raise ValueError("architecture does not match the dataset")
    sc = ds.scalers
    xb = sc.branch(ds.branch_inputs)
    coords = sc.coords(ds.coords[pos])
    times = sc.times(ds.time_grid)
    target = sc.scale_out(ds.targets[:, :, pos])
    ctx = PhysicsContext(ds, schur_nodes) if cfg.physics else None
    w2 = 0.0
    if cfg.physics:
        w2 = cfg.w2 if cfg.w2 is not None else 1.0 / max(physics_normalizer(ds, ctx, cfg.schur), 1e-300)
    out_dir = Path(out_dir) if out_dir is not None else None
    rng = np.random.default_rng(cfg.seed)
    params = init_params(arch, cfg.seed)
    state = AdamState()
    curves: list[tuple[int, float, float, float]] = []
    checkpoints: list[str] = []
    detach = cfg.gradient_mode == "detached"
    scale = sc.out_scale

    def batch_loss(p, idx):
        pred = forward(p, arch, xb[idx], coords, times)
        data = loss_dd(pred, target[idx]) if cfg.w1 > 0 else Tensor(0.0)
        phys = Tensor(0.0)
        if cfg.physics and w2 > 0:
            phys = physics_loss(pred * scale, idx, ds.lam, ctx, cfg.schur, detach)
        parts[:] = [float(data.data), float(ad.data_of(phys))]
        return data * cfg.w1 + phys * w2

    parts = [0.0, 0.0]
    t_start = time.perf_counter()
    for epoch in range(1, cfg.epochs + 1):
        tot = dat = phy = 0.0
        n_b = 0
        for idx in _batches(rng, train_idx, cfg.batch_size):
            try:
                value, grads = gradients(params, lambda p: batch_loss(p, idx))
            except NonFiniteError as exc:
                raise _diverged(params, arch, epoch, out_dir, checkpoints, str(exc)) from exc
            new_params, new_state = adam_update(params, grads, state, cfg.lr)
            if not all(np.all(np.isfinite(v)) for v in new_params.values()):
                raise _diverged(params, arch, epoch, out_dir, checkpoints, "non-finite parameters")
            params, state = new_params, new_state
            tot += value
            dat += parts[0]
            phy += parts[1]
            n_b += 1
        curves.append((epoch, tot / n_b, dat / n_b, phy / n_b))
        if progress is not None:
            progress(epoch, curves[-1])
        if out_dir is not None and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            path = out_dir / "checkpoints" / f"epoch_{epoch:06d}"
            save_checkpoint(path, params, arch, {"epoch": epoch, "strategy": cfg.strategy})
            checkpoints.append(str(path))
    train_seconds = time.perf_counter() - t_start
    result = TrainResult(params, arch, cfg, curves, train_seconds, w2, checkpoints=checkpoints)
    if evaluate_split is not None and ds.split(evaluate_split).size:
        result.report = evaluate(params, arch, ds, cfg, evaluate_split, ctx=ctx).report
        result.report.timings["train_seconds"] = train_seconds
    return result


def _diverged(params, arch, epoch, out_dir, checkpoints, why) -> TrainingDiverged:
    msg = f"training diverged at epoch {epoch}: {why}"
    if out_dir is not None:
        path = out_dir / "checkpoints" / "last_good"
        save_checkpoint(path, params, arch, {"epoch": epoch - 1, "diverged": True})
        checkpoints.append(str(path))
        msg += f"; last good parameters saved to {path}"
    return TrainingDiverged(msg, params, epoch)


def write_curves(path, curves: Sequence[tuple]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "total", "data", "physics"])
        for row in curves:
            w.writerow([row[0]] + [repr(float(x)) for x in row[1:]])


def save_run(result: TrainResult, out_dir, extra_meta: Mapping | None = None) -> Path:
    """Checkpoint, loss curve, error report and timing JSON for a finished run."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = {"strategy": result.config.strategy, "epoch": len(result.curves), "w2": result.w2,
            "training": asdict(result.config)}
    meta.update(extra_meta or {})
    save_checkpoint(out / "checkpoint", result.params, result.arch, meta)
    write_curves(out / "loss_curve.csv", result.curves)
    if result.report is not None:
        (out / "error_report.json").write_text(json.dumps(result.report.to_json(), indent=1))
    (out / "timing.json").write_text(json.dumps(result.timings(), indent=1))
    return out


# -- parametric sweep --------------------------------------------------------

SWEEP_AXES = ("neurons", "layers", "batch_size", "lr", "activation", "epochs")


def sweep(ds: Dataset, grid: Mapping[str, Sequence], base: TrainingConfig, *, neurons: int = 200,
          layers: int = 6, activation: str = "relu", seed: int = 0) -> list[dict]:
    """One training run per grid point; failures are recorded and the sweep continues."""
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ValueError("empty sweep grid")
    unknown = set(grid) - set(SWEEP_AXES)
    if unknown:
        raise ValueError(f"unknown sweep axes {sorted(unknown)}")
    axes = list(grid)
    rows = []
    for values in itertools.product(*(grid[a] for a in axes)):
        point = dict(zip(axes, values))
        row = dict(point)
        try:
            arch = ArchConfig.rectangular(ds.branch_inputs.shape[1], ds.coords.shape[1],
                                          hidden=int(point.get("neurons", neurons)),
                                          layers=int(point.get("layers", layers)), n_out=ds.n_out,
                                          activation=point.get("activation", activation), seed=seed)
            cfg = replace(base, batch_size=int(point.get("batch_size", base.batch_size)),
                          lr=float(point.get("lr", base.lr)), epochs=int(point.get("epochs", base.epochs)))
            res = train(ds, arch, cfg)
            err = res.report.errors
            row.update({"mean_rel_L2": float(err.mean()), "std": float(err.std()),
                        "train_minutes": res.train_seconds / 60.0, "status": "ok"})
        except Exception as exc:  # noqa: BLE001 - a failed point must not stop the sweep
            row.update({"mean_rel_L2": float("nan"), "std": float("nan"), "train_minutes": float("nan"),
                        "status": f"failed: {type(exc).__name__}: {exc}"})
        rows.append(row)
    return rows


def write_sweep(path, rows: Sequence[dict]) -> None:
    keys = list(rows[0])
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        w.writerows(rows)
