"""Dual-trunk multiple-input operator network.

A branch MLP encodes the loading (velocity and axle intensities), a spatial
trunk encodes node coordinates and a temporal trunk encodes query times. The
output for component ``k`` at ``(s, t)`` is

    G_k(s, t) = sum_h B_h * Ts_{h,k}(s) * Tt_h(t) + bias_k

a single contraction over ``h`` of the three feature sets, plus a per-component
output bias.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteError, Tensor
from .container import read_container, write_container

ACTIVATIONS = ("relu", "tanh", "sin")
NETWORKS = ("branch", "spatial", "temporal")


@dataclass(frozen=True)
class ArchConfig:
    branch_widths: tuple[int, ...]
    spatial_widths: tuple[int, ...]
    temporal_widths: tuple[int, ...]
    n_out: int = 3
    activation: str = "relu"
    seed: int = 0

    def __post_init__(self):
        for name in NETWORKS:
            w = getattr(self, f"{name}_widths")
            object.__setattr__(self, f"{name}_widths", tuple(int(x) for x in w))
            if len(w) < 2 or min(w) < 1:
                raise ValueError(f"{name} widths must list an input and at least one layer")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        h = self.hidden
        if self.spatial_widths[-1] != h * self.n_out:
            raise ValueError("spatial trunk must end with hidden * n_out units")
        if self.temporal_widths[-1] != h:
            raise ValueError("temporal trunk must end with hidden units")
        if self.temporal_widths[0] != 1:
            raise ValueError("temporal trunk takes a single time input")

    @property
    def hidden(self) -> int:
        return self.branch_widths[-1]

    @classmethod
    def rectangular(cls, n_branch: int, coord_dim: int = 2, hidden: int = 200, layers: int = 6,
                    n_out: int = 3, activation: str = "relu", seed: int = 0) -> "ArchConfig":
        """``layers`` dense layers of ``hidden`` units per network (last spatial layer ``hidden * n_out``)."""
        mid = (hidden,) * (layers - 1)
        return cls((n_branch,) + mid + (hidden,), (coord_dim,) + mid + (hidden * n_out,),
                   (1,) + mid + (hidden,), n_out, activation, seed)

    def to_json(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_json(cls, d: Mapping) -> "ArchConfig":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


def layer_names(arch: ArchConfig) -> list[tuple[str, int, int]]:
    out = []
    for net in NETWORKS:
        w = getattr(arch, f"{net}_widths")
        out += [(f"{net}.{i}", w[i], w[i + 1]) for i in range(len(w) - 1)]
    return out


def init_params(arch: ArchConfig, seed: int | None = None) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases, zero output bias; deterministic in ``seed``."""
    rng = np.random.default_rng(arch.seed if seed is None else seed)
    params: dict[str, np.ndarray] = {}
    for name, fan_in, fan_out in layer_names(arch):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        params[f"{name}.W"] = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        params[f"{name}.b"] = np.zeros(fan_out)
    params["out_bias"] = np.zeros(arch.n_out)
    return params


def param_count(arch: ArchConfig) -> int:
    return sum(i * o + o for _, i, o in layer_names(arch)) + arch.n_out


def activation(kind: str, x):
    """Apply ``relu``, ``tanh`` or ``sin``; works on arrays and tensors."""
    if isinstance(x, Tensor):
        return {"relu": ad.relu, "tanh": ad.tanh, "sin": ad.sin}[kind](x)
    x = np.asarray(x, dtype=float)
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "tanh":
        return np.tanh(x)
    if kind == "sin":
        return np.sin(x)
    raise ValueError(f"unknown activation {kind!r}")


def activation_derivative(kind: str, x):
    x = np.asarray(x, dtype=float)
    if kind == "relu":
        return (x > 0).astype(float)
    if kind == "tanh":
        return 1.0 - np.tanh(x) ** 2
    if kind == "sin":
        return np.cos(x)
    raise ValueError(f"unknown activation {kind!r}")


def _mlp(params, prefix: str, n_layers: int, x: Tensor, act: str) -> Tensor:
    for i in range(n_layers):
        name = f"{prefix}.{i}"
        x = x @ params[f"{name}.W"] + params[f"{name}.b"]
        if i < n_layers - 1:
            x = activation(act, x)
        if not np.all(np.isfinite(x.data)):
            raise NonFiniteError(f"non-finite output in layer {name}")
    return x


def encode(params, arch: ArchConfig, branch_in, coords, times):
    """Raw encodings ``(B, H)``, ``(S, H, K)``, ``(T, H)``."""
    p = {k: ad.as_tensor(v) for k, v in params.items()}
    b = _mlp(p, "branch", len(arch.branch_widths) - 1, ad.as_tensor(branch_in), arch.activation)
    s = _mlp(p, "spatial", len(arch.spatial_widths) - 1, ad.as_tensor(coords), arch.activation)
    t = _mlp(p, "temporal", len(arch.temporal_widths) - 1, ad.as_tensor(times), arch.activation)
    s = s.reshape(s.shape[0], arch.hidden, arch.n_out)
    return b, s, t, p["out_bias"]


def contract(b: Tensor, s: Tensor, t: Tensor) -> Tensor:
    """``Y[b,t,s,k] = sum_h B[b,h] Tt[t,h] Ts[s,h,k]`` as one matrix product.

    Branch and temporal features are multiplied first, giving a ``(B*T, H)``
    operand against the ``(H, S*K)`` spatial features; this is the cheapest
    order for the sum and keeps both passes in contiguous GEMMs.
    """
    nb, h = b.shape
    ns, _, nk = s.shape
    nt = t.shape[0]
    bd, sd, td = b.data, s.data, t.data
    mixed = (bd[:, None, :] * td[None]).reshape(nb * nt, h)
    smat = np.ascontiguousarray(sd.transpose(1, 0, 2).reshape(h, ns * nk))
    out = (mixed @ smat).reshape(nb, nt, ns, nk)

    def back(g):
        g2 = g.reshape(nb * nt, ns * nk)
        gs = (mixed.T @ g2).reshape(h, ns, nk).transpose(1, 0, 2) if s.requires_grad else None
        gm = None
        if b.requires_grad or t.requires_grad:
            gm = (g2 @ smat.T).reshape(nb, nt, h)
        gb = np.einsum("bth,th->bh", gm, td) if b.requires_grad else None
        gt = np.einsum("bth,bh->th", gm, bd) if t.requires_grad else None
        return gb, gs, gt
    return Tensor(out, _parents=(b, s, t), _backward=back)


def combine(b, s, t, bias) -> Tensor:
    return contract(b, s, t) + bias


def forward(params, arch: ArchConfig, branch_in, coords, times):
    """Predictions ``(B, T, S, K)`` (or ``(T, S, K)`` for a single branch vector).

    Inputs must already be scaled. Returns a :class:`Tensor` when any parameter is a
    tracked tensor, else an ``ndarray``.
    """
    branch_in = ad.data_of(branch_in) if not isinstance(branch_in, Tensor) else branch_in
    single = branch_in.ndim == 1
    if single:
        branch_in = branch_in.reshape(1, -1)
    coords = np.asarray(coords, dtype=float)
    times = np.asarray(times, dtype=float).reshape(-1, 1)
    if branch_in.shape[-1] != arch.branch_widths[0]:
        raise ValueError(f"branch input has {branch_in.shape[-1]} features, expected {arch.branch_widths[0]}")
    if coords.ndim != 2 or coords.shape[1] != arch.spatial_widths[0]:
        raise ValueError(f"coords must be (n, {arch.spatial_widths[0]})")
    for name, x in (("branch", ad.data_of(branch_in)), ("coords", coords), ("times", times)):
        if not np.all(np.isfinite(x)):
            raise NonFiniteError(f"non-finite {name} input")
    out = combine(*encode(params, arch, branch_in, coords, times))
    if single:
        out = out[0]
    tracked = any(isinstance(v, Tensor) and v.requires_grad for v in params.values())
    return out if tracked else out.data


def gradients(params: Mapping[str, np.ndarray], loss_fn: Callable[[dict], Tensor]) -> tuple[float, dict]:
    """Value and exact gradients of ``loss_fn(tracked_params)``."""
    tracked = {k: ad.parameter(v, name=k) for k, v in params.items()}
    loss = loss_fn(tracked)
    if not np.isfinite(loss.data).all():
        raise NonFiniteError("non-finite loss")
    loss.backward()
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in tracked.items()}
    return float(loss.data), grads


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_update(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
                state: AdamState, lr: float) -> tuple[dict, AdamState]:
    step = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {k} {p.shape}")
        m = b1 * state.m.get(k, np.zeros_like(p)) + (1 - b1) * g
        v = b2 * state.v.get(k, np.zeros_like(p)) + (1 - b2) * g * g
        m_hat = m / (1 - b1**step)
        v_hat = v / (1 - b2**step)
        new_p[k] = p - lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[k], new_v[k] = m, v
    return new_p, AdamState(new_m, new_v, step, b1, b2, state.eps)


def save_checkpoint(path, params: Mapping[str, np.ndarray], arch: ArchConfig, meta: Mapping | None = None):
    info = {"arch": arch.to_json(), "param_names": list(params)}
    info.update(meta or {})
    return write_container(path, dict(params), info, kind="checkpoint")


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], ArchConfig, dict]:
    arrays, meta = read_container(path, kind="checkpoint")
    arch = ArchConfig.from_json(meta["arch"])
    params = {k: arrays[k] for k in meta["param_names"]}
    return params, arch, meta


class Predictor:
    """Inference on a fixed query grid with the trunk features cached.

    The contraction is reordered (branch times temporal first, then one matrix
    product against the spatial features); it is the same sum as :func:`forward`.
    With ``out_scale`` the per-component output scale is folded into the cached
    spatial features and bias, so predictions come out in physical units.
    """

    def __init__(self, params: Mapping[str, np.ndarray], arch: ArchConfig, coords, times, out_scale=None):
        self.params = {k: np.asarray(v, dtype=float) for k, v in params.items()}
        self.arch = arch
        p = {k: Tensor(v) for k, v in self.params.items()}
        coords = np.asarray(coords, dtype=float)
        times = np.asarray(times, dtype=float).reshape(-1, 1)
        s = _mlp(p, "spatial", len(arch.spatial_widths) - 1, Tensor(coords), arch.activation).data
        self.n_s, self.n_t = coords.shape[0], times.shape[0]
        scale = np.ones(arch.n_out) if out_scale is None else np.asarray(out_scale, dtype=float)
        s = s.reshape(self.n_s, arch.hidden, arch.n_out) * scale
        self.spatial = np.ascontiguousarray(s.transpose(1, 0, 2).reshape(arch.hidden, -1))
        self.temporal = _mlp(p, "temporal", len(arch.temporal_widths) - 1, Tensor(times), arch.activation).data
        self.bias = self.params["out_bias"] * scale
        # one bias row per (time, sample) keeps the add a long contiguous loop
        self._bias_row = np.tile(self.bias, self.n_s)

    def branch(self, branch_in: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(branch_in, dtype=float))
        n = len(self.arch.branch_widths) - 1
        for i in range(n):
            x = x @ self.params[f"branch.{i}.W"] + self.params[f"branch.{i}.b"]
            if i < n - 1:
                x = activation(self.arch.activation, x)
        return x

    def __call__(self, branch_in: np.ndarray) -> np.ndarray:
        """Predictions ``(B, n_t, n_s, n_out)``, scaled unless ``out_scale`` was given."""
        b = self.branch(branch_in)
        h = self.arch.hidden
        mixed = (b[:, None, :] * self.temporal[None]).reshape(-1, h)
        out = mixed @ self.spatial
        out += self._bias_row
        return out.reshape(b.shape[0], self.n_t, self.n_s, self.arch.n_out)
