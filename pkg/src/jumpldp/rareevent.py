"""Change of measure for the jump process and importance sampling.

A :class:`Tilt` assigns every transition an absolute intensity that is
constant on each window ``[l eps, (l + 1) eps)``.  Under the tilted law
transition j fires at rate ``N * mu[l, j]``, except that jumps which would
leave A are switched off; the likelihood ratio uses the same effective
rates, so it is exact for the simulated law.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from . import _kernels as K
from .action import local_lagrangian, polygonalize, solve_dual
from .dynamics import Path
from .errors import HorizonMismatch, InfeasibleWindow, WindowMismatch
from .model import TOL_RATE, Model
from .stochastic import (Ensemble, Region, TerminalReplicate, Trajectory, _start_counts,
                         map_replicates, monte_carlo, replicate_rng)

MODE_ABSOLUTE = "absolute"


def _windows(T: float, epsilon: float) -> int:
    if epsilon <= 0:
        raise WindowMismatch("window length must be positive")
    n = int(round(T / epsilon))
    if n < 1 or abs(n * epsilon - T) > 1e-12 * max(1.0, T):
        raise WindowMismatch(f"epsilon={epsilon} does not tile [0, {T}]")
    return n


@dataclass(frozen=True, eq=False)
class Tilt:
    """Window-constant absolute intensities ``rates[l, j]`` on a grid of length ``epsilon``."""

    epsilon: float
    rates: np.ndarray
    support_flags: np.ndarray | None = None
    mode: str = MODE_ABSOLUTE

    def __post_init__(self):
        r = np.atleast_2d(np.asarray(self.rates, dtype=float))
        object.__setattr__(self, "rates", r)
        if np.any(r < 0) or not np.all(np.isfinite(r)):
            raise ValueError("tilt intensities must be finite and nonnegative")
        if self.epsilon <= 0:
            raise WindowMismatch("window length must be positive")
        if self.mode != MODE_ABSOLUTE:
            raise ValueError(f"unsupported tilt mode {self.mode!r}")
        if self.support_flags is not None:
            f = np.asarray(self.support_flags, dtype=bool)
            if f.shape != r.shape:
                raise ValueError("support flags must match the rate table")
            object.__setattr__(self, "support_flags", f)

    @property
    def windows(self) -> int:
        return self.rates.shape[0]

    @property
    def k(self) -> int:
        return self.rates.shape[1]

    @property
    def T(self) -> float:
        return self.windows * self.epsilon

    @property
    def n_flagged(self) -> int:
        return 0 if self.support_flags is None else int(self.support_flags.sum())

    def split(self, s: float):
        """Tilts on [0, s] and [s, T]; ``s`` must be a window edge."""
        l = int(round(s / self.epsilon))
        if not 0 < l < self.windows or abs(l * self.epsilon - s) > 1e-12 * max(1.0, s):
            raise WindowMismatch(f"split time {s} is not an interior window edge")
        f = self.support_flags
        return (Tilt(self.epsilon, self.rates[:l], None if f is None else f[:l]),
                Tilt(self.epsilon, self.rates[l:], None if f is None else f[l:]))

    def with_support_check(self, model: Model, path: Path) -> "Tilt":
        """Flag window/transition pairs with positive intensity where the base
        rate vanishes somewhere on the window, judged at the path's window
        edges and midpoint."""
        if path.T and abs(path.T - self.T) > 1e-12 * max(1.0, self.T):
            raise HorizonMismatch(f"path horizon {path.T} differs from tilt horizon {self.T}")
        edges = path.times[0] + np.arange(self.windows + 1) * self.epsilon
        mids = 0.5 * (edges[:-1] + edges[1:])
        b = np.minimum(np.minimum(model.rates(path.state_at(edges[:-1])), model.rates(path.state_at(edges[1:]))),
                       model.rates(path.state_at(mids)))
        return Tilt(self.epsilon, self.rates, (self.rates > 0) & (b <= TOL_RATE))

    def to_dict(self) -> dict:
        out = {"mode": self.mode, "epsilon": self.epsilon, "T": self.T, "rates": self.rates.tolist()}
        if self.support_flags is not None:
            out["support_flags"] = self.support_flags.astype(int).tolist()
        return out

    @classmethod
    def from_dict(cls, doc) -> "Tilt":
        flags = doc.get("support_flags")
        tilt = cls(float(doc["epsilon"]), np.asarray(doc["rates"], dtype=float),
                   None if flags is None else np.asarray(flags, dtype=bool), doc.get("mode", MODE_ABSOLUTE))
        if "T" in doc:
            _windows(float(doc["T"]), tilt.epsilon)
            if abs(float(doc["T"]) - tilt.T) > 1e-12 * max(1.0, tilt.T):
                raise WindowMismatch("window count does not match the recorded horizon")
        return tilt


def _check(model: Model, tilt: Tilt, T: float):
    if tilt.k != model.k:
        raise WindowMismatch(f"tilt has {tilt.k} transitions, model has {model.k}")
    if abs(T - tilt.T) > 1e-12 * max(1.0, T):
        raise HorizonMismatch(f"horizon {T} differs from the tilt's {tilt.T}")


def simulate_tilted(model: Model, tilt: Tilt, N: int, z, T: float | None = None, seed: int = 0,
                    replicate: int = 0, rng: np.random.Generator | None = None) -> Trajectory:
    """Jump-hold simulation under the tilted intensities."""
    T = tilt.T if T is None else float(T)
    _check(model, tilt, T)
    counts = _start_counts(model, z, N)
    init = counts.copy()
    rng = rng if rng is not None else replicate_rng(seed, replicate)
    times, trans, n, _ = K.ssa_tilted(rng, tilt.rates, float(tilt.epsilon), model.jumps, counts, N, True)
    return Trajectory(N, init, times[:n].copy(), trans[:n].copy(), T, model.jumps, False, seed)


class LikelihoodResult(NamedTuple):
    """log of dP_tilted/dP_base on the realized trajectory."""

    log_xi: float
    jump_term: float
    compensator_term: float
    impossible: bool = False

    @property
    def log_weight(self) -> float:
        """Importance weight log(1/xi); -inf when the path is impossible under the base law."""
        return -self.log_xi

    def to_dict(self) -> dict:
        return {"log_xi": self.log_xi, "jump_term": self.jump_term,
                "compensator_term": self.compensator_term, "impossible": self.impossible}


def _allowed(counts, jumps, N):
    """(P, k) mask of jumps that keep each count vector on the lattice."""
    nxt = counts[:, None, :] + jumps[None, :, :]
    return np.all(nxt >= 0, axis=-1) & (nxt.sum(axis=-1) <= N)


def log_likelihood_ratio(model: Model, tilt: Tilt, traj: Trajectory) -> LikelihoodResult:
    """Jump term sum_p log(mu_j / beta_j) at pre-jump states plus the exact
    compensator N sum_j int (beta_j - mu_j) dt over the common refinement
    of event times and window edges."""
    _check(model, tilt, traj.T)
    N = traj.N
    counts = traj.counts()
    pre = counts[:-1]
    eps = tilt.epsilon
    L = tilt.windows
    wins = np.minimum((traj.times / eps).astype(np.int64), L - 1)
    jumps_j = traj.transitions
    impossible = False
    jump_term = 0.0
    if traj.n_events:
        base = model.rates(pre / N)[np.arange(traj.n_events), jumps_j]
        tilted = tilt.rates[wins, jumps_j]
        impossible = bool(np.any(base <= 0.0))
        if not impossible:
            jump_term = math.fsum(np.log(tilted) - np.log(base))

    edges = np.arange(1, L) * eps
    cuts = np.union1d(traj.times, edges[edges < traj.T])
    starts = np.concatenate([[0.0], cuts])
    ends = np.concatenate([cuts, [traj.T]])
    keep = ends > starts
    starts, ends = starts[keep], ends[keep]
    state_idx = np.searchsorted(traj.times, starts, side="right")
    win_idx = np.minimum(np.searchsorted(edges, starts, side="right"), L - 1)
    c = counts[state_idx]
    beta = model.rates(c / N)
    mu = np.where(_allowed(c, model.jumps, N), tilt.rates[win_idx], 0.0)
    comp = N * math.fsum(((beta - mu).sum(axis=1) * (ends - starts)).tolist())
    if impossible:
        return LikelihoodResult(math.inf, math.inf, comp, True)
    return LikelihoodResult(jump_term + comp, jump_term, comp, False)


def tilt_from_path(model: Model, path: Path, epsilon: float) -> Tilt:
    """Optimal intensities for the chord of each window of the polygonalized path,
    evaluated at the chord midpoint."""
    poly = polygonalize(path, epsilon)
    mids = 0.5 * (poly.states[:-1] + poly.states[1:])
    sol = solve_dual(model.rates(mids), model.jumps, poly.slopes())
    bad = np.flatnonzero(~sol.finite)
    if bad.size:
        raise InfeasibleWindow(int(bad[0]))
    if not sol.converged.all():
        l = int(np.flatnonzero(~sol.converged)[0])
        local_lagrangian(model, mids[l], poly.slopes()[l])  # raises with diagnostics
    tilt = Tilt(float(epsilon), np.maximum(sol.mu, 0.0))
    return tilt.with_support_check(model, poly)


# ------------------------------------------------------------ estimators

@dataclass(frozen=True)
class TerminalEvent:
    """Trajectory event: the terminal state lies in ``region``."""

    region: Region

    def __call__(self, traj: Trajectory) -> bool:
        return bool(self.region(traj.terminal_state()))


@dataclass(frozen=True, eq=False)
class ISReplicate:
    model: Model
    tilt: Tilt
    N: int
    z: tuple
    event: Callable

    def __call__(self, rng):
        traj = simulate_tilted(self.model, self.tilt, self.N, self.z, rng=rng)
        hit = bool(self.event(traj))
        if not hit:
            return -math.inf, False, False
        lr = log_likelihood_ratio(self.model, self.tilt, traj)
        return lr.log_weight, True, lr.impossible


@dataclass
class ISResult:
    estimate: float
    log_estimate: float
    se: float
    support_violations: int
    hit_fraction: float
    reps: int
    base_seed: int
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"estimate": self.estimate, "log_estimate": self.log_estimate, "se": self.se,
               "support_violations": self.support_violations, "hit_fraction": self.hit_fraction,
               "reps": self.reps, "base_seed": self.base_seed}
        out.update(self.extra)
        return out


def importance_sampling_estimate(model: Model, event: Callable, tilt: Tilt, N: int, z, T: float,
                                 reps: int, base_seed: int = 0, workers: int | None = None) -> ISResult:
    """Average of 1{event} / xi_T over trajectories simulated under ``tilt``.

    Replicates whose realized jumps are impossible under the base law get
    weight zero and are counted as support violations.
    """
    _check(model, tilt, float(T))
    rows = map_replicates(ISReplicate(model, tilt, N, tuple(np.ravel(z)), event), reps, base_seed, workers)
    logw = np.array([r[0] for r in rows], dtype=float)
    hits = sum(r[1] for r in rows)
    violations = sum(r[2] for r in rows)
    finite = logw[np.isfinite(logw)]
    if finite.size == 0:
        return ISResult(0.0, -math.inf, 0.0, violations, hits / reps, reps, base_seed)
    top = float(finite.max())
    scaled = np.where(np.isfinite(logw), np.exp(logw - top), 0.0)
    mean_scaled = math.fsum(scaled) / reps
    log_est = top + math.log(mean_scaled)
    var = math.fsum((scaled - mean_scaled) ** 2) / (reps - 1) if reps > 1 else 0.0
    se = math.exp(top) * math.sqrt(var / reps)
    return ISResult(math.exp(log_est), log_est, se, violations, hits / reps, reps, base_seed)


def crude_estimate(model: Model, region: Region, N: int, z, T: float, reps: int,
                   base_seed: int = 0, workers: int | None = None) -> Ensemble:
    """Plain Monte Carlo frequency of the terminal state landing in ``region``."""
    return monte_carlo(TerminalReplicate(model, N, tuple(np.ravel(z)), float(T), region),
                       reps, base_seed, workers)
