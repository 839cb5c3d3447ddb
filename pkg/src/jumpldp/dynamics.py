"""Fluid limit: drift field, fixed-step RK4 flow and equilibria."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import LeftDomain, NoConvergence, OutOfDomain
from .model import TOL_A, DomainA, Model, require_in_A


@dataclass(frozen=True, eq=False)
class Path:
    """Piecewise-linear path through ``states`` at strictly increasing ``times``."""

    times: np.ndarray
    states: np.ndarray
    projections: int = 0

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        x = np.asarray(self.states, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", x)
        if t.ndim != 1 or t.size < 2:
            raise ValueError("a path needs at least two nodes")
        if x.shape[0] != t.size:
            raise ValueError(f"{t.size} times but {x.shape[0]} states")
        if not np.all(np.diff(t) > 0):
            raise ValueError("path times must be strictly increasing")
        if not DomainA(x.shape[1]).contains(x):
            raise OutOfDomain("path leaves A")

    @property
    def T(self) -> float:
        return float(self.times[-1] - self.times[0])

    @property
    def m(self) -> int:
        return self.times.size - 1

    @property
    def d(self) -> int:
        return self.states.shape[1]

    def slopes(self) -> np.ndarray:
        return np.diff(self.states, axis=0) / np.diff(self.times)[:, None]

    def state_at(self, t):
        """Linear interpolation; ``t`` scalar or 1-D array."""
        t = np.asarray(t, dtype=float)
        out = np.stack([np.interp(t, self.times, self.states[:, i]) for i in range(self.d)], axis=-1)
        return out

    def sup_distance(self, other: "Path") -> float:
        """Sup over the union of both node sets of the distance between interpolants."""
        t = np.union1d(self.times, other.times)
        return float(np.max(np.linalg.norm(self.state_at(t) - other.state_at(t), axis=-1)))

    def to_csv(self, fh, names=None):
        names = list(names) if names is not None else [f"z{i}" for i in range(self.d)]
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + names)
        for t, x in zip(self.times, self.states):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in x])

    @classmethod
    def from_csv(cls, fh, names=None) -> "Path":
        rows = list(csv.reader(fh))
        header, body = rows[0], [r for r in rows[1:] if r]
        if header[0].strip() != "t":
            raise ValueError("path CSV must start with a 't' column")
        cols = [h.strip() for h in header[1:]]
        if names is not None and list(names) != cols:
            raise ValueError(f"path columns {cols} do not match compartments {list(names)}")
        data = np.array([[float(v) for v in r] for r in body])
        return cls(data[:, 0], data[:, 1:])


@dataclass(frozen=True)
class Equilibrium:
    point: np.ndarray
    jacobian_eigen_max_real: float
    stable: bool
    iterations: int
    residual: float


def drift(model: Model, z) -> np.ndarray:
    """b(z) = sum_j beta_j(z) h_j."""
    z = require_in_A(z, model.d)
    return model.rates(z) @ model.jumps


def _drift(model, z):
    return model.rates(z) @ model.jumps


def drift_jacobian(model: Model, z) -> np.ndarray:
    """Exact Jacobian sum_j h_j grad beta_j(z)^T."""
    g = model.rate_gradients(np.asarray(z, dtype=float))
    return model.jumps.T.astype(float) @ g


def project_to_A(z):
    """Clip negative coordinates to 0, rescale if the sum exceeds 1.

    Returns (projected, changed)."""
    z = np.asarray(z, dtype=float)
    p = np.maximum(z, 0.0)
    s = p.sum()
    if s > 1.0:
        p = p / s
    changed = bool(np.any(p != z))
    return p, changed


def integrate_ode(model: Model, z, T: float, dt: float | None = None) -> Path:
    """Classical RK4 with fixed step ``dt`` (default ``T / 10**4``; last step shortened).

    Nodes leaving A are projected back; ``Path.projections`` counts them.
    """
    z = require_in_A(z, model.d, "initial state")
    if T <= 0:
        raise ValueError("horizon must be positive")
    dt = T / 1e4 if dt is None else float(dt)
    if not 0 < dt <= T:
        raise ValueError("need 0 < dt <= T")
    n = int(np.ceil(T / dt - 1e-9))
    times = np.minimum(np.arange(n + 1) * dt, T)
    times[-1] = T
    states = np.empty((n + 1, model.d))
    states[0] = z
    x = z.copy()
    projections = 0
    for s in range(n):
        h = times[s + 1] - times[s]
        k1 = _drift(model, x)
        k2 = _drift(model, x + 0.5 * h * k1)
        k3 = _drift(model, x + 0.5 * h * k2)
        k4 = _drift(model, x + h * k3)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not DomainA(model.d, TOL_A).contains(x):
            x, changed = project_to_A(x)
            projections += int(changed)
        states[s + 1] = x
    return Path(times, states, projections)


def _max_real_eig(J):
    if J.size == 0:
        return 0.0
    return float(np.max(np.linalg.eigvals(J).real))


def find_equilibrium(model: Model, guess, tol: float = 1e-12, max_iter: int = 100) -> Equilibrium:
    """Damped Newton on b(z) = 0 from ``guess``, staying inside A.

    The step is halved until the iterate stays in A and |b| decreases;
    failure to stay in A raises :class:`LeftDomain`.
    """
    x = require_in_A(guess, model.d, "guess")
    dom = DomainA(model.d)
    b = _drift(model, x)
    res = float(np.linalg.norm(b))
    it = 0
    while res > tol and it < max_iter:
        J = drift_jacobian(model, x)
        step = -np.linalg.lstsq(J, b, rcond=None)[0]
        alpha = 1.0
        accepted = False
        kept_in_A = False
        for _ in range(60):
            cand = x + alpha * step
            if dom.contains(cand):
                kept_in_A = True
                cand_res = float(np.linalg.norm(_drift(model, cand)))
                if cand_res < res:
                    accepted = True
                    break
            alpha *= 0.5
        it += 1
        if not accepted:
            if not kept_in_A:
                raise LeftDomain(f"Newton iterates leave A near {x.tolist()}", state=x)
            raise NoConvergence(
                f"damped Newton stalled at {x.tolist()} with |b| = {res:.3g}",
                {"iterations": it, "residual": res, "point": x.tolist()},
            )
        x = cand
        b = _drift(model, x)
        res = cand_res
    if res > tol:
        raise NoConvergence(
            f"no equilibrium within {max_iter} iterations (|b| = {res:.3g})",
            {"iterations": it, "residual": res, "point": x.tolist()},
        )
    lam = _max_real_eig(drift_jacobian(model, x))
    return Equilibrium(x, lam, lam < 0, it, res)
