"""From raw transient histories to scaled operator-learning datasets."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .container import ContainerError, read_container, read_header, write_container
from .dynamics import IntegratorConfig, ResponseHistory, update_kinematics
from .fem import UY

EPS = 1e-12
COMPONENTS = ("ux", "uy", "rz")


# -- trimming / stretching / resampling -----------------------------------

def trim_index(series: np.ndarray, threshold: float = 1e-6, consecutive: int = 3) -> int:
    """Number of leading steps kept by the tail trim of a monitored series.

    The search for ``consecutive`` sub-threshold steps starts at the series peak,
    so the quiet steps before the load reaches the structure are never cut.
    Returns ``len(series)`` when no qualifying run exists or the series never
    reaches the threshold.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    if consecutive < 1:
        raise ValueError("consecutive must be >= 1")
    series = np.asarray(series, dtype=float)
    if series.size == 0:
        raise ValueError("empty history")
    if series.max() < threshold:
        return series.size
    below = series < threshold
    run = 0
    for i in range(int(np.argmax(series)), series.size):
        run = run + 1 if below[i] else 0
        if run == consecutive:
            return i - consecutive + 1
    return series.size


def monitored_series(u: np.ndarray, component: int = UY) -> np.ndarray:
    """Max over nodes of ``|u|`` for one DOF component, per step."""
    return np.abs(u[:, component::3]).max(axis=1)


def truncate(history: ResponseHistory, n_keep: int) -> ResponseHistory:
    return ResponseHistory(history.times[:n_keep], history.u[:n_keep], history.v[:n_keep],
                           history.a[:n_keep], history.dt, history.lam, history.scenario)


def trim_tail(history: ResponseHistory, threshold: float = 1e-6, consecutive: int = 3,
              component: int = UY) -> ResponseHistory:
    if history.n_steps == 0:
        raise ValueError("empty history")
    keep = trim_index(monitored_series(history.u, component), threshold, consecutive)
    return history if keep == history.n_steps else truncate(history, keep)


def stretch_factor(reference_duration: float, duration: float) -> float:
    if reference_duration <= 0 or duration <= 0:
        raise ValueError("durations must be positive")
    return reference_duration / duration


def _interp_rows(x_src: np.ndarray, y: np.ndarray, x_new: np.ndarray) -> np.ndarray:
    idx = np.clip(np.searchsorted(x_src, x_new, side="right") - 1, 0, x_src.size - 2)
    w = (x_new - x_src[idx]) / (x_src[idx + 1] - x_src[idx])
    w = w.reshape((-1,) + (1,) * (y.ndim - 1))
    out = y[idx] * (1.0 - w) + y[idx + 1] * w
    # pin the endpoints bit-exactly
    out[0] = y[0]
    out[-1] = y[-1]
    return out


def resample(history: ResponseHistory, n_steps: int, lam: float = 1.0, mode: str = "regenerate",
             alpha: float = -0.05) -> ResponseHistory:
    """Map a history onto ``n_steps`` uniform points of the stretched span ``[0, lam * T]``.

    ``mode`` selects how velocity and acceleration follow: ``interpolate`` them
    like ``u``, ``regenerate`` them from the resampled ``u`` through the
    stretched HHT kinematics, or ``drop`` them (zeros).
    """
    if n_steps < 2:
        raise ValueError("need at least two target steps")
    if history.n_steps < 2:
        raise ValueError("degenerate source history")
    src = history.times * lam
    grid = np.linspace(0.0, src[-1], n_steps)
    dt = grid[1] - grid[0]
    u = _interp_rows(src, history.u, grid)
    if mode == "interpolate":
        v = _interp_rows(src, history.v, grid)
        a = _interp_rows(src, history.a, grid)
    elif mode == "regenerate":
        v, a = regenerate_kinematics(u, IntegratorConfig(dt=dt, alpha=alpha, lam=lam),
                                     history.v[0], history.a[0])
    elif mode == "drop":
        v = np.zeros_like(u)
        a = np.zeros_like(u)
    else:
        raise ValueError(f"unknown resample mode {mode!r}")
    return ResponseHistory(grid, u, v, a, dt, lam, history.scenario)


def regenerate_kinematics(u: np.ndarray, cfg: IntegratorConfig, v0=None, a0=None):
    v = np.zeros_like(u)
    a = np.zeros_like(u)
    if v0 is not None:
        v[0] = v0
    if a0 is not None:
        a[0] = a0
    for t in range(u.shape[0] - 1):
        a[t + 1], v[t + 1] = update_kinematics(u[t + 1], u[t], v[t], a[t], cfg)
    return v, a


# -- dataset ----------------------------------------------------------------

@dataclass
class ScalerParams:
    branch_shift: np.ndarray
    branch_scale: np.ndarray
    coord_scale: np.ndarray
    time_scale: float
    out_scale: np.ndarray
    degenerate: list[str] = field(default_factory=list)

    @classmethod
    def fit(cls, branch: np.ndarray, targets: np.ndarray, coords: np.ndarray, t_end: float) -> "ScalerParams":
        shift = branch.mean(axis=0)
        std = branch.std(axis=0)
        degenerate = [f"branch[{i}]" for i in np.flatnonzero(std < EPS)]
        out = np.abs(targets).reshape(-1, targets.shape[-1]).max(axis=0)
        degenerate += [f"output[{i}]" for i in np.flatnonzero(out < EPS)]
        cscale = np.abs(coords).max(axis=0)
        return cls(shift, np.maximum(std, EPS), np.where(cscale > 0, cscale, 1.0),
                   float(t_end) if t_end > 0 else 1.0, np.maximum(out, EPS), degenerate)

    def to_json(self) -> dict:
        d = asdict(self)
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in d.items()}

    @classmethod
    def from_json(cls, d: dict) -> "ScalerParams":
        return cls(np.asarray(d["branch_shift"], float), np.asarray(d["branch_scale"], float),
                   np.asarray(d["coord_scale"], float), float(d["time_scale"]),
                   np.asarray(d["out_scale"], float), list(d.get("degenerate", [])))

    def branch(self, x):
        return (np.asarray(x, float) - self.branch_shift) / self.branch_scale

    def coords(self, xy):
        return np.asarray(xy, float) / self.coord_scale

    def times(self, t):
        return np.asarray(t, float).reshape(-1, 1) / self.time_scale

    def scale_out(self, y):
        return np.asarray(y, float) / self.out_scale

    def unscale_out(self, y):
        return np.asarray(y, float) * self.out_scale


@dataclass
class Dataset:
    branch_inputs: np.ndarray          # (n, n_branch) physical: velocity m/s, loads N/m
    coords: np.ndarray                 # (n_nodes, 2)
    time_grid: np.ndarray              # (n_t,) reference-grid times
    targets: np.ndarray                # (n, n_t, n_nodes, n_out) physical
    lam: np.ndarray                    # (n,)
    scalers: ScalerParams
    train_idx: np.ndarray
    test_idx: np.ndarray
    loads: np.ndarray | None = None    # (n, n_t, n_dof) on the reference grid
    K: np.ndarray | None = None
    M: np.ndarray | None = None
    C: np.ndarray | None = None
    constrained_dofs: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    alpha: float = -0.05
    scenarios: list[dict] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        n, n_t, n_nodes, _ = self.targets.shape
        if self.branch_inputs.shape[0] != n or self.lam.shape != (n,):
            raise ValueError("sample counts disagree")
        if self.coords.shape[0] != n_nodes or self.time_grid.shape != (n_t,):
            raise ValueError("coordinate/time grids disagree with targets")
        if n_t > 1:
            d = np.diff(self.time_grid)
            if np.any(d <= 0) or not np.allclose(d, d[0], rtol=1e-9, atol=0):
                raise ValueError("time grid must be strictly increasing and uniform")
        if self.loads is not None and self.loads.shape[:2] != (n, n_t):
            raise ValueError("load histories disagree with targets")

    @property
    def n_samples(self) -> int:
        return self.targets.shape[0]

    @property
    def dt(self) -> float:
        return float(self.time_grid[1] - self.time_grid[0])

    @property
    def n_out(self) -> int:
        return self.targets.shape[-1]

    def split(self, name: str) -> np.ndarray:
        return {"train": self.train_idx, "test": self.test_idx,
                "all": np.arange(self.n_samples)}[name]


def split_indices(n: int, train_ratio: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    if not 0.0 < train_ratio < 1.0:
        raise ValueError("train ratio must lie in (0, 1)")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = min(max(int(round(train_ratio * n)), 1), n)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def build_dataset(branch_inputs: np.ndarray, histories: Sequence[ResponseHistory], coords: np.ndarray,
                  lams: Sequence[float], *, nodes: Sequence[int] | None = None,
                  components: Sequence[int] = (0, 1, 2), loads: np.ndarray | None = None,
                  train_ratio: float = 0.3, seed: int = 0, **kw) -> Dataset:
    """Stack resampled histories into targets and fit scalers on the training split."""
    if not histories:
        raise ValueError("no histories given")
    grid = histories[0].times
    for h in histories:
        if h.n_steps != grid.size or not np.allclose(h.times, grid, rtol=1e-12, atol=1e-12):
            raise ValueError("histories do not share the reference grid")
    n_nodes_all = histories[0].u.shape[1] // 3
    nodes = list(range(n_nodes_all)) if nodes is None else list(nodes)
    comps = list(components)
    targets = np.stack([h.u.reshape(h.n_steps, n_nodes_all, 3)[:, nodes][:, :, comps] for h in histories])
    branch_inputs = np.asarray(branch_inputs, dtype=float)
    train, test = split_indices(len(histories), train_ratio, seed)
    if train.size == 0:
        raise ValueError("empty training split")
    scalers = ScalerParams.fit(branch_inputs[train], targets[train], coords[nodes], grid[-1])
    extra = dict(kw.pop("extra", {}))
    extra.update({"nodes": nodes, "components": [COMPONENTS[c] for c in comps]})
    return Dataset(branch_inputs, np.asarray(coords, float)[nodes], grid.copy(), targets,
                   np.asarray(lams, float), scalers, train, test, loads=loads, extra=extra, **kw)


_ARRAYS = ("branch_inputs", "coords", "time_grid", "targets", "lam", "loads", "K", "M", "C")


def save_dataset(ds: Dataset, path) -> Path:
    arrays = {k: getattr(ds, k) for k in _ARRAYS if getattr(ds, k) is not None}
    meta = {
        "scalers": ds.scalers.to_json(),
        "train_idx": ds.train_idx.tolist(),
        "test_idx": ds.test_idx.tolist(),
        "constrained_dofs": np.asarray(ds.constrained_dofs).tolist(),
        "alpha": ds.alpha,
        "dt": ds.dt if ds.time_grid.size > 1 else None,
        "lambda_table": sorted(set(float(x) for x in ds.lam)),
        "scenarios": ds.scenarios,
        "extra": ds.extra,
    }
    return write_container(path, arrays, meta, kind="dataset")


def dataset_shapes(path) -> dict[str, tuple[int, ...]]:
    """Array shapes from the header alone."""
    header = read_header(path, kind="dataset")
    return {k: tuple(v["shape"]) for k, v in header["arrays"].items()}


def load_dataset(path, verify: bool = True) -> Dataset:
    arrays, meta = read_container(path, kind="dataset", verify=verify)
    missing = [k for k in ("branch_inputs", "coords", "time_grid", "targets", "lam") if k not in arrays]
    if missing:
        raise ContainerError(f"dataset lacks arrays {missing}")
    return Dataset(
        arrays["branch_inputs"], arrays["coords"], arrays["time_grid"], arrays["targets"], arrays["lam"],
        ScalerParams.from_json(meta["scalers"]),
        np.asarray(meta["train_idx"], dtype=int), np.asarray(meta["test_idx"], dtype=int),
        loads=arrays.get("loads"), K=arrays.get("K"), M=arrays.get("M"), C=arrays.get("C"),
        constrained_dofs=np.asarray(meta.get("constrained_dofs", []), dtype=int),
        alpha=float(meta.get("alpha", -0.05)), scenarios=list(meta.get("scenarios", [])),
        extra=dict(meta.get("extra", {})),
    )


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True, default=_jsonable), encoding="utf-8")


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    raise TypeError(f"cannot serialise {type(x).__name__}")
