"""Exact simulation of the density-dependent jump process.

The jump-hold (Gillespie) construction used here is equal in law to the
random time change of independent unit Poisson processes.  Randomness comes
from a Philox counter-based generator keyed by ``(seed, replicate)``;
replicate ``r`` of an ensemble therefore draws the same stream no matter
which worker runs it.
"""

from __future__ import annotations

import csv
import math
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _kernels as K
from .dynamics import Path
from .errors import HorizonMismatch, LeftDomain, PreconditionError, ReplicateError
from .model import TOL_RATE, Model, require_in_A

RNG_NAME = "numpy.Philox(key=[seed mod 2**64, replicate])"
_MASK64 = (1 << 64) - 1


def replicate_rng(base_seed: int, replicate: int = 0) -> np.random.Generator:
    """Generator for replicate ``replicate`` of an ensemble keyed by ``base_seed``."""
    return np.random.Generator(np.random.Philox(key=[int(base_seed) & _MASK64, int(replicate)]))


def scaled_counts(z, N: int) -> np.ndarray:
    """Integer parts [N z_i]; a 1e-9 guard absorbs binary rounding of N z."""
    return np.floor(np.asarray(z, dtype=float) * N + 1e-9).astype(np.int64)


# ---------------------------------------------------------------- regions

_CONSTRAINT = re.compile(r"^\s*([A-Za-z_][A-Za-z_0-9]*)\s*(>=|<=|>|<)\s*([-+0-9.eE]+)\s*$")
_OPS = {">": K.OP_GT, ">=": K.OP_GE, "<": K.OP_LT, "<=": K.OP_LE}


@dataclass(frozen=True)
class Region:
    """Conjunction of coordinate bounds such as ``i > 0`` or ``s <= 0.9``.

    Callable on a scaled state.  Exit-time sampling checks it inside the
    compiled loop.
    """

    constraints: tuple  # (index, op, value)
    text: str = ""

    @classmethod
    def parse(cls, text: str, compartments: Sequence[str]) -> "Region":
        names = list(compartments)
        out = []
        for part in text.split(","):
            m = _CONSTRAINT.match(part)
            if m is None:
                raise ValueError(f"cannot parse constraint {part.strip()!r}")
            name, op, val = m.groups()
            if name not in names:
                raise ValueError(f"unknown compartment {name!r} in constraint")
            out.append((names.index(name), op, float(val)))
        return cls(tuple(out), text)

    def arrays(self):
        idx = np.array([c[0] for c in self.constraints], dtype=np.int64)
        op = np.array([_OPS[c[1]] for c in self.constraints], dtype=np.int64)
        val = np.array([c[2] for c in self.constraints], dtype=float)
        return idx, op, val

    def __call__(self, z) -> bool:
        z = np.asarray(z, dtype=float)
        for i, op, v in self.constraints:
            x = z[i]
            ok = {">": x > v, ">=": x >= v, "<": x < v, "<=": x <= v}[op]
            if not ok:
                return False
        return True


_NO_REGION = (np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0))


# ------------------------------------------------------------ trajectories

@dataclass(frozen=True, eq=False)
class Trajectory:
    """One sample path: initial counts, ordered (time, transition) events."""

    N: int
    counts_init: np.ndarray
    times: np.ndarray
    transitions: np.ndarray
    T: float
    jumps: np.ndarray
    absorbed: bool = False
    seed: int | None = None

    @property
    def z_init(self) -> np.ndarray:
        return self.counts_init / self.N

    @property
    def d(self) -> int:
        return self.counts_init.size

    @property
    def n_events(self) -> int:
        return int(self.times.size)

    def counts(self) -> np.ndarray:
        """Count vectors: row 0 is the initial state, row p the state after event p."""
        steps = self.jumps[self.transitions] if self.n_events else np.zeros((0, self.d), np.int64)
        return np.vstack([self.counts_init[None, :], self.counts_init + np.cumsum(steps, axis=0)])

    def states(self) -> np.ndarray:
        return self.counts() / self.N

    def state_at(self, t):
        """Right-continuous state at time(s) ``t``."""
        idx = np.searchsorted(self.times, np.asarray(t, dtype=float), side="right")
        return self.states()[idx]

    def terminal_state(self) -> np.ndarray:
        return self.states()[-1]

    def event_counts(self, k: int) -> np.ndarray:
        return np.bincount(self.transitions, minlength=k)

    def split(self, s: float):
        """Trajectories on [0, s] and on [s, T] (the latter shifted to start at 0)."""
        if not 0 < s < self.T:
            raise ValueError("split time must lie inside (0, T)")
        cut = np.searchsorted(self.times, s, side="right")
        first = Trajectory(self.N, self.counts_init, self.times[:cut], self.transitions[:cut],
                           s, self.jumps, False, self.seed)
        mid = self.counts()[cut]
        second = Trajectory(self.N, mid, self.times[cut:] - s, self.transitions[cut:],
                            self.T - s, self.jumps, self.absorbed, self.seed)
        return first, second

    def to_dict(self) -> dict:
        return {
            "N": self.N,
            "T": self.T,
            "z_init": self.z_init.tolist(),
            "seed": self.seed,
            "absorbed": self.absorbed,
            "times": self.times.tolist(),
            "transitions": self.transitions.tolist(),
        }

    def to_csv(self, fh, names=None):
        """Rows ``t,transition,<state after jump>``; the first row is the
        initial state with transition -1."""
        names = list(names) if names is not None else [f"z{i}" for i in range(self.d)]
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "transition"] + names)
        states = self.states()
        w.writerow(["0.0", -1] + [repr(float(v)) for v in states[0]])
        for p in range(self.n_events):
            w.writerow([repr(float(self.times[p])), int(self.transitions[p])]
                       + [repr(float(v)) for v in states[p + 1]])


@dataclass(frozen=True)
class ExitSample:
    tau: float | None
    exit_state: np.ndarray | None = None
    censored_at: float | None = None

    @property
    def censored(self) -> bool:
        return self.tau is None


def _raise_left(model, counts, j, N, t):
    bad = (counts + model.jumps[j]) / N
    raise LeftDomain(
        f"transition {model.transitions[j].name!r} at t={t:.6g} takes "
        f"{(counts / N).tolist()} to {bad.tolist()}, outside A",
        state=counts / N,
        transition=j,
    )


def _start_counts(model, z, N):
    if N < 1:
        raise ValueError("N must be at least 1")
    z = require_in_A(z, model.d, "initial state")
    return scaled_counts(z, N)


def simulate(model: Model, N: int, z, T: float, seed: int = 0, replicate: int = 0,
             rng: np.random.Generator | None = None) -> Trajectory:
    """Simulate Z^N on [0, T] from ([N z_1]/N, ..., [N z_d]/N).

    Holding times are Exponential(N * sum_j beta_j) over the strictly
    positive rates; the run ends early when the total rate drops to
    ``TOL_RATE`` (absorption).  Raises :class:`LeftDomain` if a jump leaves A.
    """
    if T <= 0:
        raise ValueError("horizon must be positive")
    counts = _start_counts(model, z, N)
    init = counts.copy()
    rng = rng if rng is not None else replicate_rng(seed, replicate)
    coef, exps = model.poly_arrays
    times, trans, n, status, t_stop, final = K.ssa(
        rng, coef, exps, model.jumps, counts, N, 0.0, float(T), TOL_RATE, *_NO_REGION, True
    )
    if status == K.STATUS_LEFT_A:
        _raise_left(model, final, trans[n - 1], N, times[n - 1])
    return Trajectory(N, init, times[:n].copy(), trans[:n].copy(), float(T), model.jumps,
                      status == K.STATUS_ABSORBED, seed)


def simulate_terminal(model: Model, N: int, z, T: float, rng: np.random.Generator) -> np.ndarray:
    """Terminal scaled state only (no event recording)."""
    counts = _start_counts(model, z, N)
    coef, exps = model.poly_arrays
    times, trans, n, status, t_stop, final = K.ssa(
        rng, coef, exps, model.jumps, counts, N, 0.0, float(T), TOL_RATE, *_NO_REGION, False
    )
    if status == K.STATUS_LEFT_A:
        _raise_left(model, final, trans[0], N, t_stop)
    return final / N


def lln_distance(traj: Trajectory, ode_path: Path, tol: float = 1e-9) -> float:
    """Sup distance between the jump trajectory and the interpolated ODE path.

    Evaluated at every ODE node and on both sides of every event time.
    """
    if abs(traj.T - ode_path.T) > tol * max(1.0, traj.T):
        raise HorizonMismatch(f"trajectory horizon {traj.T} vs path horizon {ode_path.T}")
    states = traj.states()
    dist = np.linalg.norm(traj.state_at(ode_path.times) - ode_path.states, axis=-1)
    best = float(dist.max())
    if traj.n_events:
        y = ode_path.state_at(traj.times)
        post = np.linalg.norm(states[1:] - y, axis=-1)
        pre = np.linalg.norm(states[:-1] - y, axis=-1)
        best = max(best, float(post.max()), float(pre.max()))
    return best


def sample_exit_time(model: Model, N: int, z, in_domain: Callable, t_max: float,
                     seed: int = 0, replicate: int = 0,
                     rng: np.random.Generator | None = None,
                     chunk: float = 1.0) -> ExitSample:
    """First time the process leaves ``in_domain``, censored at ``t_max``.

    A :class:`Region` is checked inside the compiled loop; any other
    predicate is checked by replaying events chunk by chunk, which is exact
    because holding times are memoryless.
    """
    counts = _start_counts(model, z, N)
    if not in_domain(counts / N):
        raise PreconditionError(f"start {(counts / N).tolist()} is not inside the domain")
    rng = rng if rng is not None else replicate_rng(seed, replicate)
    coef, exps = model.poly_arrays
    if isinstance(in_domain, Region):
        times, trans, n, status, t_stop, final = K.ssa(
            rng, coef, exps, model.jumps, counts, N, 0.0, float(t_max), TOL_RATE,
            *in_domain.arrays(), False
        )
        if status == K.STATUS_LEFT_A:
            _raise_left(model, final, trans[0], N, t_stop)
        if status == K.STATUS_EXITED:
            return ExitSample(float(t_stop), final / N)
        return ExitSample(None, censored_at=float(t_max))
    t = 0.0
    while t < t_max:
        t_end = min(t + chunk, t_max)
        start = counts.copy()
        times, trans, n, status, t_stop, final = K.ssa(
            rng, coef, exps, model.jumps, counts, N, t, t_end, TOL_RATE, *_NO_REGION, True
        )
        if status == K.STATUS_LEFT_A:
            _raise_left(model, final, trans[n - 1], N, times[n - 1])
        cur = start
        for p in range(n):
            cur = cur + model.jumps[trans[p]]
            if not in_domain(cur / N):
                return ExitSample(float(times[p]), cur / N)
        if status == K.STATUS_ABSORBED:
            break
        t = t_end
    return ExitSample(None, censored_at=float(t_max))


# ------------------------------------------------------------- ensembles

@dataclass(frozen=True)
class Ensemble:
    values: np.ndarray
    mean: float
    variance: float
    se: float
    reps: int
    base_seed: int
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_values(cls, values, base_seed, **extra) -> "Ensemble":
        v = np.asarray(values, dtype=float)
        reps = v.size
        mean = math.fsum(v) / reps
        var = math.fsum((v - mean) ** 2) / (reps - 1) if reps > 1 else 0.0
        return cls(v, mean, var, math.sqrt(var / reps), reps, base_seed, dict(extra))

    def to_dict(self, values=True) -> dict:
        out = {"mean": self.mean, "variance": self.variance, "se": self.se,
               "reps": self.reps, "base_seed": self.base_seed, "rng": RNG_NAME}
        out.update(self.extra)
        if values:
            out["values"] = self.values.tolist()
        return out


def _run_chunk(func, base_seed, start, stop):
    out = []
    for r in range(start, stop):
        try:
            out.append(func(replicate_rng(base_seed, r)))
        except Exception as exc:  # noqa: BLE001 - re-raised with the replicate index
            raise ReplicateError(r, exc) from exc
    return out


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("JUMPLDP_WORKERS", "1")))
    except ValueError:
        return 1


def map_replicates(func: Callable, reps: int, base_seed: int, workers: int | None = None) -> list:
    """``[func(rng_r) for r in range(reps)]`` with rng_r = replicate_rng(base_seed, r).

    With ``workers > 1`` contiguous blocks of replicates run in worker
    processes (``func`` must then be picklable); the result is identical.
    """
    if reps < 1:
        raise ValueError("reps must be at least 1")
    workers = default_workers() if workers is None else max(1, int(workers))
    if workers == 1 or reps < 2:
        return _run_chunk(func, base_seed, 0, reps)
    blocks = min(reps, workers * 4)
    edges = np.linspace(0, reps, blocks + 1).astype(int)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_run_chunk, func, base_seed, int(a), int(b))
                   for a, b in zip(edges[:-1], edges[1:]) if b > a]
        out = []
        for f in futures:
            out.extend(f.result())
    return out


def monte_carlo(func: Callable, reps: int, base_seed: int, workers: int | None = None) -> Ensemble:
    """Mean, variance and standard error of ``func`` over keyed replicates."""
    return Ensemble.from_values(map_replicates(func, reps, base_seed, workers), base_seed)


# picklable replicate descriptions

@dataclass(frozen=True, eq=False)
class TerminalReplicate:
    """Indicator (or value) of a terminal-state predicate under the base law."""

    model: Model
    N: int
    z: tuple
    T: float
    event: Callable

    def __call__(self, rng):
        return float(bool(self.event(simulate_terminal(self.model, self.N, self.z, self.T, rng))))


@dataclass(frozen=True, eq=False)
class LLNReplicate:
    model: Model
    N: int
    z: tuple
    path: Path

    def __call__(self, rng):
        traj = simulate(self.model, self.N, self.z, self.path.T, rng=rng)
        return lln_distance(traj, self.path)


@dataclass(frozen=True, eq=False)
class ExitReplicate:
    model: Model
    N: int
    z: tuple
    in_domain: Callable
    t_max: float

    def __call__(self, rng):
        return sample_exit_time(self.model, self.N, self.z, self.in_domain, self.t_max, rng=rng)


def exit_time_ensemble(model: Model, N: int, z, in_domain: Callable, t_max: float, reps: int,
                       base_seed: int, workers: int | None = None) -> Ensemble:
    """Ensemble of exit times; censored replicates are counted and excluded from the mean."""
    samples = map_replicates(ExitReplicate(model, N, tuple(z), in_domain, t_max), reps, base_seed, workers)
    taus = [s.tau for s in samples if not s.censored]
    censored = sum(s.censored for s in samples)
    if not taus:
        return Ensemble(np.zeros(0), math.nan, math.nan, math.nan, 0, base_seed,
                        {"censored": censored, "t_max": t_max, "requested_reps": reps})
    return Ensemble.from_values(taus, base_seed, censored=censored, t_max=t_max, requested_reps=reps)
