"""Planar Timoshenko frame model of a truss-like beam structure.

Every node carries three DOFs ``(ux, uy, rz)`` numbered ``3 * node + local``.
Members are two-node Timoshenko beams with rigid joints, so the "truss" is
really a frame and rotations are part of the response.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping, Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

UX, UY, RZ = 0, 1, 2
DOF_NAMES = ("ux", "uy", "rz")
DOFS_PER_NODE = 3


class ModelError(ValueError):
    """Raised for an inconsistent or degenerate structural model."""


class SingularSystemError(RuntimeError):
    """Raised when a system cannot be solved (e.g. an unrestrained static mode)."""


@dataclass(frozen=True)
class Material:
    youngs_modulus: float = 210e9
    poisson_ratio: float = 0.3
    density: float = 7850.0

    @property
    def shear_modulus(self) -> float:
        return self.youngs_modulus / (2.0 * (1.0 + self.poisson_ratio))


@dataclass(frozen=True)
class Section:
    area: float
    inertia: float
    shear_factor: float = 5.0 / 6.0

    @classmethod
    def rectangle(cls, height: float, width: float, shear_factor: float = 5.0 / 6.0) -> "Section":
        return cls(area=height * width, inertia=width * height**3 / 12.0, shear_factor=shear_factor)


@dataclass(frozen=True)
class Element:
    nodes: tuple[int, int]
    section: str = "default"


@dataclass(frozen=True)
class StructureModel:
    nodes: Mapping[int, tuple[float, float]]
    elements: Mapping[int, Element]
    sections: Mapping[str, Section]
    material: Material
    supports: Mapping[int, tuple[str, ...]]
    loaded_chord: tuple[int, ...] = ()
    lumped_mass: bool = False
    dof_map: Mapping[tuple[int, int], int] = field(init=False)

    def __post_init__(self):
        node_ids = sorted(self.nodes)
        if node_ids != list(range(len(node_ids))):
            raise ModelError("node ids must be the contiguous range 0..n-1")
        coords = {tuple(np.round(c, 12)) for c in self.nodes.values()}
        if len(coords) != len(self.nodes):
            raise ModelError("duplicate node coordinates")
        for eid, el in self.elements.items():
            a, b = el.nodes
            if a not in self.nodes or b not in self.nodes:
                raise ModelError(f"element {eid} references a missing node")
            if el.section not in self.sections:
                raise ModelError(f"element {eid} references unknown section {el.section!r}")
            if self.length(eid) <= 0.0:
                raise ModelError(f"element {eid} has zero length")
        for nid, dofs in self.supports.items():
            if nid not in self.nodes:
                raise ModelError(f"support on missing node {nid}")
            bad = set(dofs) - set(DOF_NAMES)
            if bad:
                raise ModelError(f"unknown DOF names {sorted(bad)} at node {nid}")
        dof_map = {
            (nid, local): DOFS_PER_NODE * nid + local
            for nid in node_ids
            for local in range(DOFS_PER_NODE)
        }
        object.__setattr__(self, "nodes", MappingProxyType(dict(self.nodes)))
        object.__setattr__(self, "elements", MappingProxyType(dict(self.elements)))
        object.__setattr__(self, "sections", MappingProxyType(dict(self.sections)))
        object.__setattr__(self, "supports", MappingProxyType(dict(self.supports)))
        object.__setattr__(self, "dof_map", MappingProxyType(dof_map))

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_dof(self) -> int:
        return DOFS_PER_NODE * self.n_nodes

    def coordinates(self) -> np.ndarray:
        return np.array([self.nodes[i] for i in range(self.n_nodes)], dtype=float)

    def length(self, eid: int) -> float:
        a, b = self.elements[eid].nodes
        return float(np.hypot(*(np.subtract(self.nodes[b], self.nodes[a]))))

    def element_dofs(self, eid: int) -> np.ndarray:
        a, b = self.elements[eid].nodes
        return np.array([self.dof_map[(n, k)] for n in (a, b) for k in range(DOFS_PER_NODE)])

    def constrained_dofs(self) -> np.ndarray:
        dofs = [self.dof_map[(nid, DOF_NAMES.index(name))]
                for nid, names in self.supports.items() for name in names]
        return np.array(sorted(set(dofs)), dtype=int)

    def node_dofs(self, node_ids: Sequence[int]) -> np.ndarray:
        """Global DOF indices of the given nodes, node-major."""
        return np.array([self.dof_map[(n, k)] for n in node_ids for k in range(DOFS_PER_NODE)], dtype=int)


@dataclass(frozen=True)
class RayleighCoefficients:
    mass: float = 0.1
    stiffness: float = 0.05

    def __post_init__(self):
        if self.mass < 0 or self.stiffness < 0:
            raise ValueError("Rayleigh coefficients must be non-negative")


@dataclass(frozen=True, eq=False)
class AssembledSystem:
    K: np.ndarray
    M: np.ndarray
    C: np.ndarray
    constrained_dofs: np.ndarray
    free_dofs: np.ndarray

    @property
    def n_dof(self) -> int:
        return self.K.shape[0]

    def free_block(self, name: str) -> np.ndarray:
        A = getattr(self, name)
        return A[np.ix_(self.free_dofs, self.free_dofs)]


@dataclass(frozen=True)
class TrussGeometry:
    """Rectangular Pratt truss; each member is split into equal Timoshenko elements.

    The default reproduces the 56-node, 168-DOF beam preset.
    """
    span: float = 20.0
    height: float = 5.0
    panels: int = 4
    chord_divisions: int = 4
    vertical_divisions: int = 3
    diagonal_divisions: int = 4
    section_height: float = 0.4
    section_width: float = 0.25
    shear_factor: float = 5.0 / 6.0
    material: Material = Material()
    lumped_mass: bool = False

    def expected_nodes(self) -> int:
        p = self.panels
        return (2 * (p + 1) + 2 * p * (self.chord_divisions - 1)
                + (p + 1) * (self.vertical_divisions - 1) + p * (self.diagonal_divisions - 1))


def build_truss_model(geometry: TrussGeometry = TrussGeometry()) -> StructureModel:
    """Build the truss-like frame. Bottom-chord nodes come first, ordered by x.

    The bottom-left node is hinged (ux, uy) and the bottom-right node sits on a
    roller (uy). Diagonals slope down toward mid-span.
    """
    g = geometry
    if g.span <= 0 or g.height <= 0:
        raise ModelError("span and height must be positive")
    if g.panels < 2:
        raise ModelError("at least two panels are required")
    if min(g.chord_divisions, g.vertical_divisions, g.diagonal_divisions) < 1:
        raise ModelError("member divisions must be >= 1")
    p = g.panels
    dx = g.span / p
    bottom = [(i * dx, 0.0) for i in range(p + 1)]
    top = [(i * dx, g.height) for i in range(p + 1)]
    members = []
    members += [(bottom[i], bottom[i + 1], g.chord_divisions) for i in range(p)]
    members += [(top[i], top[i + 1], g.chord_divisions) for i in range(p)]
    members += [(bottom[i], top[i], g.vertical_divisions) for i in range(p + 1)]
    for i in range(p):
        if i + 1 <= p / 2:
            members.append((top[i], bottom[i + 1], g.diagonal_divisions))
        else:
            members.append((bottom[i], top[i + 1], g.diagonal_divisions))

    points: dict[tuple[float, float], None] = {}
    segments = []
    for a, b, n_div in members:
        pts = [tuple(np.round(np.add(a, np.multiply(np.subtract(b, a), k / n_div)), 12))
               for k in range(n_div + 1)]
        for q in pts:
            points.setdefault(q, None)
        segments += list(zip(pts[:-1], pts[1:]))
    ordered = sorted(points, key=lambda q: (q[1] != 0.0, q[1], q[0]))
    ids = {q: i for i, q in enumerate(ordered)}
    nodes = {i: (float(q[0]), float(q[1])) for q, i in ids.items()}
    elements = {k: Element((ids[a], ids[b])) for k, (a, b) in enumerate(segments)}
    chord = tuple(i for i, q in enumerate(ordered) if q[1] == 0.0)
    section = Section.rectangle(g.section_height, g.section_width, g.shear_factor)
    return StructureModel(
        nodes=nodes,
        elements=elements,
        sections={"default": section},
        material=g.material,
        supports={chord[0]: ("ux", "uy"), chord[-1]: ("uy",)},
        loaded_chord=chord,
        lumped_mass=g.lumped_mass,
    )


def default_schur_nodes(model: StructureModel, count: int = 5) -> list[int]:
    """Evenly spaced interior loaded-chord nodes, symmetric about mid-span."""
    chord = list(model.loaded_chord)
    last = len(chord) - 1
    picks = sorted({int(np.floor(last * k / (count + 1) + 0.5)) for k in range(1, count + 1)})
    if len(picks) != count:
        raise ModelError(f"loaded chord too coarse for {count} retained nodes")
    return [chord[i] for i in picks]


def _rotation(c: float, s: float) -> np.ndarray:
    T = np.zeros((6, 6))
    R = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
    T[:3, :3] = R
    T[3:, 3:] = R
    return T


def local_element_matrices(L: float, section: Section, material: Material,
                           lumped: bool = False) -> tuple[np.ndarray, np.ndarray]:
    if L <= 0:
        raise ModelError("zero-length element")
    if not 0.0 < section.shear_factor <= 1.0:
        raise ModelError("shear correction factor must lie in (0, 1]")
    E, G, rho = material.youngs_modulus, material.shear_modulus, material.density
    A, I, kappa = section.area, section.inertia, section.shear_factor
    phi = 12.0 * E * I / (kappa * G * A * L**2)

    k = np.zeros((6, 6))
    ea = E * A / L
    k[np.ix_([0, 3], [0, 3])] = ea * np.array([[1.0, -1.0], [-1.0, 1.0]])
    kb = E * I / ((1.0 + phi) * L**3) * np.array([
        [12.0, 6 * L, -12.0, 6 * L],
        [6 * L, (4 + phi) * L**2, -6 * L, (2 - phi) * L**2],
        [-12.0, -6 * L, 12.0, -6 * L],
        [6 * L, (2 - phi) * L**2, -6 * L, (4 + phi) * L**2],
    ])
    bend = [1, 2, 4, 5]
    k[np.ix_(bend, bend)] = kb

    m = np.zeros((6, 6))
    mass = rho * A * L
    if lumped:
        rot = rho * L * (I + A * L**2 / 12.0) / 2.0
        m[np.diag_indices(6)] = [mass / 2, mass / 2, rot, mass / 2, mass / 2, rot]
        return k, m

    m[np.ix_([0, 3], [0, 3])] = mass / 6.0 * np.array([[2.0, 1.0], [1.0, 2.0]])
    p = phi
    c = mass / (1.0 + p) ** 2
    m11 = 13 / 35 + 7 * p / 10 + p**2 / 3
    m12 = (11 / 210 + 11 * p / 120 + p**2 / 24) * L
    m13 = 9 / 70 + 3 * p / 10 + p**2 / 6
    m14 = -(13 / 420 + 3 * p / 40 + p**2 / 24) * L
    m22 = (1 / 105 + p / 60 + p**2 / 120) * L**2
    m24 = -(1 / 140 + p / 60 + p**2 / 120) * L**2
    mt = c * np.array([
        [m11, m12, m13, m14],
        [m12, m22, -m14, m24],
        [m13, -m14, m11, -m12],
        [m14, m24, -m12, m22],
    ])
    r = rho * I / ((1.0 + p) ** 2 * L)
    r12 = (1 / 10 - p / 2) * L
    r22 = (2 / 15 + p / 6 + p**2 / 3) * L**2
    r24 = (-1 / 30 - p / 6 + p**2 / 6) * L**2
    mr = r * np.array([
        [6 / 5, r12, -6 / 5, r12],
        [r12, r22, -r12, r24],
        [-6 / 5, -r12, 6 / 5, -r12],
        [r12, r24, -r12, r22],
    ])
    m[np.ix_(bend, bend)] = mt + mr
    return k, m


def element_matrices(model: StructureModel, eid: int) -> tuple[np.ndarray, np.ndarray]:
    """Global-frame stiffness and consistent (or lumped) mass of one element."""
    el = model.elements[eid]
    a, b = el.nodes
    dx, dy = np.subtract(model.nodes[b], model.nodes[a])
    L = float(np.hypot(dx, dy))
    k, m = local_element_matrices(L, model.sections[el.section], model.material, model.lumped_mass)
    T = _rotation(dx / L, dy / L)
    return T.T @ k @ T, T.T @ m @ T


def assemble(model: StructureModel) -> tuple[np.ndarray, np.ndarray]:
    """Scatter-add element matrices into global ``(K, M)``."""
    n = model.n_dof
    K = np.zeros((n, n))
    M = np.zeros((n, n))
    for eid in sorted(model.elements):
        dofs = model.element_dofs(eid)
        if dofs.max() >= n or dofs.min() < 0:
            raise ModelError(f"element {eid} maps outside the DOF range")
        ke, me = element_matrices(model, eid)
        ix = np.ix_(dofs, dofs)
        K[ix] += ke
        M[ix] += me
    # drop round-off asymmetry from the rotations
    return 0.5 * (K + K.T), 0.5 * (M + M.T)


def rayleigh_damping(M: np.ndarray, K: np.ndarray, coeffs: RayleighCoefficients) -> np.ndarray:
    if M.shape != K.shape:
        raise ValueError(f"M {M.shape} and K {K.shape} differ in shape")
    return coeffs.mass * M + coeffs.stiffness * K


def apply_boundary_conditions(K: np.ndarray, M: np.ndarray, C: np.ndarray,
                              constrained: Sequence[int]) -> AssembledSystem:
    n = K.shape[0]
    constrained = np.unique(np.asarray(constrained, dtype=int))
    if constrained.size and (constrained.min() < 0 or constrained.max() >= n):
        raise ModelError("constrained DOF index out of range")
    free = np.setdiff1d(np.arange(n), constrained)
    if free.size == 0:
        raise ModelError("all DOFs are constrained")
    return AssembledSystem(K=K, M=M, C=C, constrained_dofs=constrained, free_dofs=free)


def assemble_system(model: StructureModel,
                    rayleigh: RayleighCoefficients = RayleighCoefficients()) -> AssembledSystem:
    K, M = assemble(model)
    C = rayleigh_damping(M, K, rayleigh)
    return apply_boundary_conditions(K, M, C, model.constrained_dofs())


def rigid_body_modes(model: StructureModel) -> np.ndarray:
    """Columns: x translation, y translation, rotation about the origin."""
    xy = model.coordinates()
    R = np.zeros((model.n_dof, 3))
    R[UX::3, 0] = 1.0
    R[UY::3, 1] = 1.0
    R[UX::3, 2] = -xy[:, 1]
    R[UY::3, 2] = xy[:, 0]
    R[RZ::3, 2] = 1.0
    return R


def static_solve(system: AssembledSystem, F: np.ndarray) -> np.ndarray:
    f = system.free_dofs
    try:
        factor = cho_factor(system.free_block("K"))
    except LinAlgError as exc:
        raise SingularSystemError("singular static mode") from exc
    u = np.zeros(system.n_dof)
    u[f] = cho_solve(factor, F[f])
    return u
