"""Scenario grid -> FEM histories -> trimmed, stretched, resampled dataset."""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .data import (Dataset, build_dataset, monitored_series, resample, stretch_factor,
                   trim_index, truncate)
from .dynamics import (Factorized, FreeSystem, IntegratorConfig, MovingLoadScenario,
                       ResponseHistory, effective_force, loads_at, moving_load_history, simulate)
from .fem import (RayleighCoefficients, StructureModel, TrussGeometry, assemble_system,
                  build_truss_model, default_schur_nodes)

PATTERNS = ("uniform", "increasing", "decreasing")


class GenerationError(RuntimeError):
    """A scenario failed to simulate; the message names it."""


@dataclass(frozen=True)
class AxleConfig:
    """Group of equally spaced axles; ``pattern`` ramps intensities along the group."""
    name: str = "single"
    count: int = 1
    spacing: float = 0.0
    pattern: str = "uniform"
    ramp: float = 0.5

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("axle count must be >= 1")
        if self.count > 1 and self.spacing <= 0:
            raise ValueError("multi-axle groups need a positive spacing")
        if self.pattern not in PATTERNS:
            raise ValueError(f"unknown load pattern {self.pattern!r}")
        if not 0.0 <= self.ramp < 1.0:
            raise ValueError("ramp must lie in [0, 1)")

    def offsets(self) -> tuple[float, ...]:
        return tuple(k * self.spacing for k in range(self.count))

    def intensities(self, q: float) -> tuple[float, ...]:
        if self.count == 1 or self.pattern == "uniform":
            return (q,) * self.count
        f = np.linspace(1.0 - self.ramp, 1.0 + self.ramp, self.count)
        if self.pattern == "decreasing":
            f = f[::-1]
        return tuple(float(q * x) for x in f)


@dataclass(frozen=True)
class GenerationConfig:
    velocities: tuple[float, ...] = (10.0, 15.0, 20.0, 25.0)
    loads_per_case: int = 50
    load_range: tuple[float, float] = (5e3, 30e3)      # N/m
    axle_configs: tuple[AxleConfig, ...] = (AxleConfig(),)
    load_length: float = 2.0
    dt: float = 0.01
    duration: float = 2.5
    tail: float = 0.3
    alpha: float = -0.05
    n_steps: int = 56
    trim_threshold: float = 1e-6
    trim_consecutive: int = 3
    resample_mode: str = "regenerate"
    train_ratio: float = 0.3
    seed: int = 0
    geometry: TrussGeometry = field(default_factory=TrussGeometry)
    rayleigh: RayleighCoefficients = field(default_factory=RayleighCoefficients)
    schur_count: int = 5
    schur_nodes: tuple[int, ...] | None = None
    threads: int = 1

    def __post_init__(self):
        lo, hi = self.load_range
        if not 0 <= lo <= hi:
            raise ValueError("load range must satisfy 0 <= low <= high")
        if self.loads_per_case < 0:
            raise ValueError("loads_per_case must be >= 0")
        if min(self.velocities, default=1.0) <= 0:
            raise ValueError("velocities must be positive")

    @property
    def max_axles(self) -> int:
        return max((c.count for c in self.axle_configs), default=1)


@dataclass
class SampleRecord:
    index: int
    group: int
    scenario: MovingLoadScenario
    axle_config: str
    intensity: float
    trimmed_steps: int = 0
    trimmed_duration: float = 0.0
    fem_seconds: float = 0.0

    def to_json(self) -> dict:
        s = self.scenario
        return {"index": self.index, "group": self.group, "velocity": s.velocity,
                "axle_config": self.axle_config, "intensity": self.intensity,
                "axle_loads": list(s.axle_loads), "axle_offsets": list(s.axle_offsets),
                "trimmed_duration": self.trimmed_duration, "fem_seconds": self.fem_seconds}


def scenario_grid(cfg: GenerationConfig) -> list[SampleRecord]:
    """Velocities x axle configurations x sampled intensities, seeded."""
    rng = np.random.default_rng(cfg.seed)
    out: list[SampleRecord] = []
    group = 0
    for v in cfg.velocities:
        for ac in cfg.axle_configs:
            qs = rng.uniform(*cfg.load_range, size=cfg.loads_per_case)
            for q in qs:
                sc = MovingLoadScenario(float(v), ac.intensities(float(q)), ac.offsets(), cfg.load_length)
                out.append(SampleRecord(len(out), group, sc, ac.name, float(q)))
            group += 1
    if not out:
        raise ValueError("empty scenario grid")
    return out


def branch_vector(scenario: MovingLoadScenario, max_axles: int) -> np.ndarray:
    x = np.zeros(1 + max_axles)
    x[0] = scenario.velocity
    x[1:1 + len(scenario.axle_loads)] = scenario.axle_loads
    return x


def simulation_duration(cfg: GenerationConfig, scenario: MovingLoadScenario, span_end: float) -> float:
    """Configured duration, extended when the last axle would still be on the span."""
    need = scenario.exit_time(span_end) + cfg.tail
    if need <= cfg.duration:
        return cfg.duration
    return float(np.ceil(need / cfg.dt - 1e-9) * cfg.dt)


@dataclass
class Generated:
    dataset: Dataset
    manifest: dict
    histories: list[ResponseHistory]
    model: StructureModel
    companions: dict[int, Dataset] = field(default_factory=dict)


def _simulate_one(model, system, fs, k_eff, cfg, rec: SampleRecord, span_end):
    t0 = time.perf_counter()
    duration = simulation_duration(cfg, rec.scenario, span_end)
    loads = moving_load_history(model, rec.scenario, cfg.dt, duration)
    hist = simulate(fs, loads, IntegratorConfig(cfg.dt, cfg.alpha), k_eff=k_eff,
                    scenario=rec.scenario, check_static=False)
    rec.fem_seconds = time.perf_counter() - t0
    rec.trimmed_steps = trim_index(monitored_series(hist.u), cfg.trim_threshold, cfg.trim_consecutive)
    rec.trimmed_duration = float(hist.times[rec.trimmed_steps - 1])
    return hist


def generate(cfg: GenerationConfig, keep_raw: bool = False,
             companion_factors: Sequence[int] = ()) -> Generated:
    """Run the full generation pipeline in memory.

    ``companion_factors`` adds datasets on grids refined by those factors, built
    from the same simulations (for temporal-resolution checks).
    """
    records = scenario_grid(cfg)
    t_setup = time.perf_counter()
    model = build_truss_model(cfg.geometry)
    system = assemble_system(model, cfg.rayleigh)
    fs = FreeSystem.from_assembled(system)
    k_eff = Factorized(fs.k_eff(IntegratorConfig(cfg.dt, cfg.alpha)))
    setup_seconds = time.perf_counter() - t_setup
    span_end = max(model.nodes[n][0] for n in model.loaded_chord)

    def run(rec):
        try:
            return _simulate_one(model, system, fs, k_eff, cfg, rec, span_end)
        except Exception as exc:  # noqa: BLE001 - re-raised with the scenario identity
            s = rec.scenario
            raise GenerationError(f"scenario {rec.index} (v={s.velocity} m/s, axles={rec.axle_config}, "
                                  f"q={rec.intensity:.1f} N/m) failed: {exc}") from exc

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            raw = list(pool.map(run, records))
    else:
        raw = [run(r) for r in records]

    # one duration per (velocity, axle configuration) group; the longest is the reference
    n_groups = max(r.group for r in records) + 1
    group_T = np.zeros(n_groups)
    for r in records:
        group_T[r.group] = max(group_T[r.group], r.trimmed_duration)
    if np.any(group_T <= 0):
        raise GenerationError("a scenario group never produced a measurable response")
    t_ref = float(group_T.max())
    group_lam = np.array([stretch_factor(t_ref, T) for T in group_T])
    grid = np.linspace(0.0, t_ref, cfg.n_steps)

    branch = np.stack([branch_vector(r.scenario, cfg.max_axles) for r in records])
    schur = list(cfg.schur_nodes) if cfg.schur_nodes is not None else default_schur_nodes(model, cfg.schur_count)
    fem_s = np.array([r.fem_seconds for r in records])
    extra = {"schur_nodes": schur, "n_nodes_model": model.n_nodes,
             "fem_seconds": fem_s.tolist(), "fem_setup_seconds": setup_seconds,
             "group": [r.group for r in records], "reference_duration": t_ref,
             "resample_mode": cfg.resample_mode}

    def assemble_grid(n_steps: int, factor: int) -> tuple[Dataset, dict]:
        grid = np.linspace(0.0, t_ref, n_steps)
        resampled, loads, lams = [], [], []
        for r, h in zip(records, raw):
            lam = float(group_lam[r.group])
            keep = int(round(group_T[r.group] / cfg.dt)) + 1
            h_rs = resample(truncate(h, keep), n_steps, lam=lam, mode=cfg.resample_mode, alpha=cfg.alpha)
            resampled.append(replace(h_rs, times=grid.copy()))
            loads.append(loads_at(model, r.scenario, grid / lam))
            lams.append(lam)
        loads = np.stack(loads)
        residual = resampled_residual(fs, resampled, loads, lams, cfg.alpha)
        ds = build_dataset(branch, resampled, model.coordinates(), lams, loads=loads,
                           train_ratio=cfg.train_ratio, seed=cfg.seed, K=system.K, M=system.M, C=system.C,
                           constrained_dofs=system.constrained_dofs, alpha=cfg.alpha,
                           scenarios=[r.to_json() for r in records],
                           extra=dict(extra, grid_factor=factor, resampled_residual=residual))
        return ds, residual

    ds, residual = assemble_grid(cfg.n_steps, 1)
    companions = {}
    for f in companion_factors:
        if f > 1:
            companions[f] = assemble_grid((cfg.n_steps - 1) * f + 1, f)[0]
    groups = []
    for g in range(n_groups):
        members = [r for r in records if r.group == g]
        groups.append({"group": g, "velocity": members[0].scenario.velocity,
                       "axle_config": members[0].axle_config, "samples": len(members),
                       "trimmed_duration": float(group_T[g]), "lambda": float(group_lam[g])})
    manifest = {
        "n_samples": len(records),
        "reference_duration": t_ref,
        "reference_dt": ds.dt,
        "native_dt": cfg.dt,
        "groups": groups,
        "samples": [r.to_json() for r in records],
        "fem_setup_seconds": setup_seconds,
        "fem_seconds_mean": float(fem_s.mean()),
        "resampled_residual": residual,
        "schur_nodes": schur,
    }
    return Generated(ds, manifest, raw if keep_raw else [], model, companions)


def resampled_residual(fs: FreeSystem, histories, loads, lams, alpha: float) -> dict:
    """Relative equilibrium residual on the reference grid (informational).

    Interpolation does not preserve the discrete equilibrium, so this is only
    reported, never enforced.
    """
    f = fs.free_dofs
    worst, total = 0.0, []
    for h, F, lam in zip(histories, loads, lams):
        cfg = IntegratorConfig(h.dt if h.n_steps < 2 else float(h.times[1] - h.times[0]), alpha, lam)
        u, v, a, Ff = h.u[:, f], h.v[:, f], h.a[:, f], F[:, f]
        f_eff = effective_force(Ff[:-1], Ff[1:], u[:-1], v[:-1], a[:-1], fs.M, fs.C, fs.K, cfg)
        r = u[1:] @ fs.k_eff(cfg).T - f_eff
        rel = float(np.linalg.norm(r) / max(np.linalg.norm(f_eff), 1e-300))
        total.append(rel)
        worst = max(worst, rel)
    return {"mean_relative": float(np.mean(total)), "max_relative": worst}
