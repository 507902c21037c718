"""Small model builders shared by the test modules."""
import numpy as np

from pimionet.dynamics import FreeSystem
from pimionet.fem import Element, Material, Section, StructureModel


def random_damped_system(rng, n, damping=True):
    """Random SPD mass/stiffness pair with Rayleigh-type damping."""
    A = rng.standard_normal((n, n))
    K = A @ A.T + n * np.eye(n)
    B = rng.standard_normal((n, n))
    M = B @ B.T / n + np.eye(n)
    C = (0.05 * M + 0.01 * K) if damping else np.zeros((n, n))
    return FreeSystem.from_matrices(M, C, K)


def single_element_model(length=5.0, angle=0.0, supports=None, section=None):
    c, s = np.cos(angle), np.sin(angle)
    return StructureModel(
        nodes={0: (0.0, 0.0), 1: (length * c, length * s)},
        elements={0: Element((0, 1))},
        sections={"default": section or Section.rectangle(0.4, 0.25)},
        material=Material(),
        supports=supports if supports is not None else {},
    )


def _gauss_solve(A, b):
    """Partial-pivot elimination that keeps the dtype of its inputs (used in long double)."""
    A, b = A.copy(), b.copy()
    n = b.size
    for k in range(n):
        p = k + int(np.argmax(np.abs(A[k:, k])))
        A[[k, p]], b[[k, p]] = A[[p, k]], b[[p, k]]
        for i in range(k + 1, n):
            f = A[i, k] / A[k, k]
            A[i, k:] -= f * A[k, k:]
            b[i] -= f * b[k]
    x = np.zeros_like(b)
    for k in range(n - 1, -1, -1):
        x[k] = (b[k] - A[k, k + 1:] @ x[k + 1:]) / A[k, k]
    return x


def newmark_average_acceleration(M, C, K, F, u0, v0, dt):
    """Textbook Newmark (beta=1/4, gamma=1/2), coded independently and run in long double."""
    ld = np.longdouble
    M, C, K, F = (np.asarray(x, dtype=ld) for x in (M, C, K, F))
    dt = ld(dt)
    beta, gamma = ld(0.25), ld(0.5)
    n_t, n = F.shape
    u = np.zeros((n_t, n), dtype=ld)
    v = np.zeros((n_t, n), dtype=ld)
    a = np.zeros((n_t, n), dtype=ld)
    u[0], v[0] = u0, v0
    a[0] = _gauss_solve(M, F[0] - C @ v[0] - K @ u[0])
    a1 = M / (beta * dt**2) + gamma / (beta * dt) * C
    a2 = M / (beta * dt) + (gamma / beta - 1) * C
    a3 = (1 / (2 * beta) - 1) * M + dt * (gamma / (2 * beta) - 1) * C
    khat = K + a1
    for i in range(n_t - 1):
        p = F[i + 1] + a1 @ u[i] + a2 @ v[i] + a3 @ a[i]
        u[i + 1] = _gauss_solve(khat, p)
        v[i + 1] = (gamma / (beta * dt) * (u[i + 1] - u[i]) + (1 - gamma / beta) * v[i]
                    + dt * (1 - gamma / (2 * beta)) * a[i])
        a[i + 1] = ((u[i + 1] - u[i]) / (beta * dt**2) - v[i] / (beta * dt)
                    - (1 / (2 * beta) - 1) * a[i])
    return u, v, a


ACCEPTANCE_LINES = []


def record_criterion(number, title, ok, detail):
    """Log one acceptance line; the terminal summary prints them all."""
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}: {title} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok
