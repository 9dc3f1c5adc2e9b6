"""Replicator dynamics u_i' = sum_j (phi_i - phi_j) u_i u_j with phi = A u."""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DomainError


def _as_matrix(A):
    if hasattr(A, "entries"):
        a11, a12, a21, a22 = A.entries()
        return np.array([[a11, a12], [a21, a22]])
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DomainError("payoff matrix must be square")
    return A


def replicator_rhs(u, A):
    u = np.asarray(u, dtype=float)
    A = _as_matrix(A)
    if u.shape != (A.shape[0],):
        raise DomainError(f"state of length {u.shape} does not match a {A.shape} matrix")
    phi = A @ u
    # antisymmetric in (i, j), so the components sum to zero
    diff = phi[:, None] - phi[None, :]
    return (diff * np.outer(u, u)).sum(axis=1)


@dataclass(frozen=True)
class MeanFieldTrajectory:
    times: np.ndarray
    u: np.ndarray          # shape (steps + 1, n)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time"] + [f"u{i + 1}" for i in range(self.u.shape[1])])
            for t, row in zip(self.times, self.u):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in row])


def integrate(u0, A, T, dt=1e-3):
    """Fixed-step classical RK4; the last step is shortened to land on T."""
    if not dt > 0:
        raise DomainError("dt must be positive")
    u = np.asarray(u0, dtype=float).copy()
    if np.any(u < 0) or abs(u.sum() - 1.0) > 1e-9:
        raise DomainError("initial state must lie on the simplex")
    A = _as_matrix(A)
    n_full = int(np.floor(T / dt + 1e-9))
    steps = [dt] * n_full
    rest = T - n_full * dt
    if rest > 1e-12:
        steps.append(rest)
    times = np.zeros(len(steps) + 1)
    out = np.zeros((len(steps) + 1, u.shape[0]))
    out[0] = u
    t = 0.0
    for i, h in enumerate(steps):
        k1 = replicator_rhs(u, A)
        k2 = replicator_rhs(u + 0.5 * h * k1, A)
        k3 = replicator_rhs(u + 0.5 * h * k2, A)
        k4 = replicator_rhs(u + h * k3, A)
        u = u + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
        times[i + 1] = t
        out[i + 1] = u
    return MeanFieldTrajectory(times, out)


def logistic(u0, t):
    """u(t) solving u' = u (1 - u), the a11 = a12 = 1, a21 = a22 = 0 case."""
    e = np.exp(t)
    return u0 * e / (1 - u0 + u0 * e)


def interior_fixed_point(A):
    """Interior rest point of a 2x2 game (phi_1 = phi_2), or None."""
    A = _as_matrix(A)
    den = A[0, 0] - A[0, 1] - A[1, 0] + A[1, 1]
    if den == 0:
        return None
    u1 = (A[1, 1] - A[0, 1]) / den
    if not 0 < u1 < 1:
        return None
    return np.array([u1, 1 - u1])
