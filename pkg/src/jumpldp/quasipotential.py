"""Minimal action between states, quasipotentials and birth-death oracles.

Paths are polygonal with uniform time nodes; the interior nodes are moved
by a limited-memory BFGS iteration with backtracking.  Gradients come from
the envelope identities in :func:`jumpldp.action.action_gradient`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .action import action_gradient, path_action
from .dynamics import Path
from .errors import EmptyBoundary, NotBirthDeath
from .model import TOL_A, TOL_RATE, DomainA, InteriorMap, Model, require_in_A

A_REG = 1e-6
A_END = 0.01
N_SEGMENTS = 200
MAX_ITER = 10_000
STALL_WINDOW = 10
STALL_TOL = 1e-9
T_GRID = tuple(np.geomspace(1.0, 200.0, 12))
GOLDEN_STEPS = 3
LBFGS_MEMORY = 10


class FixedHorizonResult(NamedTuple):
    action: float
    path: Path
    converged: bool
    iterations: int


@dataclass
class QuasipotentialResult:
    value: float
    path: Path
    T_star: float
    per_T: list = field(default_factory=list)
    converged: bool = True
    target: np.ndarray | None = None
    sample_index: int | None = None
    minimizers: dict = field(default_factory=dict, repr=False)  # T -> fixed-horizon minimizer

    def to_dict(self, path_file: str | None = None) -> dict:
        out = {
            "V": self.value,
            "T_star": self.T_star,
            "converged": self.converged,
            "per_T": [{"T": t, "action": a, "converged": c} for t, a, c in self.per_T],
            "start": self.path.states[0].tolist(),
            "end": self.path.states[-1].tolist(),
        }
        if self.sample_index is not None:
            out["sample_index"] = self.sample_index
        if path_file is not None:
            out["path_csv"] = path_file
        return out


@dataclass(frozen=True)
class DomainSpec:
    """Domain O by membership test, with the crossable boundary given by samples."""

    in_domain: Callable
    boundary_samples: Sequence

    def samples(self, d: int) -> np.ndarray:
        s = np.asarray(self.boundary_samples, dtype=float)
        if s.size == 0:
            raise EmptyBoundary("no boundary samples supplied")
        return s.reshape(-1, d)


def regularize_endpoint(z, a_end: float = A_END, imap: InteriorMap | None = None):
    """Pull a point on the boundary of A inside by the interior map; interior points pass."""
    z = np.asarray(z, dtype=float)
    imap = imap or InteriorMap.default(z.size)
    if DomainA(z.size).distance_to_boundary(z) <= TOL_A:
        return imap.shrink(z, a_end)
    return z


# ------------------------------------------------------------ fixed horizon

def _guard(nodes, imap, a_reg):
    """Shrink nodes that come closer to the boundary than c2 * a_reg."""
    dist = DomainA(nodes.shape[1]).distance_to_boundary(nodes)
    close = dist < imap.c2 * a_reg
    if close.any():
        nodes = nodes.copy()
        nodes[close] = imap.shrink(nodes[close], a_reg)
    return nodes


def _resample(path: Path, times) -> np.ndarray:
    s = (np.asarray(times) - times[0]) / (times[-1] - times[0])
    return path.state_at(path.times[0] + s * path.T)


def minimize_action_fixed_T(model: Model, z_start, z_end, T: float, n_segments: int = N_SEGMENTS,
                            init: Path | None = None, a_reg: float = A_REG,
                            imap: InteriorMap | None = None, max_iter: int = MAX_ITER,
                            tol: float = STALL_TOL) -> FixedHorizonResult:
    """Least action over polygonal paths from ``z_start`` to ``z_end`` in time ``T``.

    The initial path is ``init`` resampled onto the uniform grid, or the
    straight chord pushed into the interior.  Stops when the objective drops
    by less than ``tol`` over ten iterations.
    """
    a = require_in_A(z_start, model.d, "start")
    b = require_in_A(z_end, model.d, "end")
    if n_segments < 2:
        raise ValueError("need at least two segments")
    if T <= 0:
        raise ValueError("horizon must be positive")
    imap = imap or InteriorMap.default(model.d)
    times = np.linspace(0.0, T, n_segments + 1)
    if init is not None:
        states = _resample(init, times)
    else:
        s = times / T
        states = a[None, :] + s[:, None] * (b - a)[None, :]
    states[0], states[-1] = a, b
    states[1:-1] = _guard(imap.shrink(states[1:-1], a_reg) if init is None else states[1:-1], imap, a_reg)
    dom = DomainA(model.d)

    def evaluate(x, theta0=None):
        full = np.vstack([a, x, b])
        val, g, th = action_gradient(model, full, times, theta0=theta0)
        return val, g[1:-1], th

    x = states[1:-1].copy()
    f, g, theta = evaluate(x)
    history = [f]
    s_list, y_list = [], []
    it = 0
    converged = False
    while it < max_iter and math.isfinite(f):
        gflat = g.ravel()
        if np.linalg.norm(gflat) < 1e-14:
            converged = True
            break
        # two-loop recursion
        q = gflat.copy()
        alphas = []
        for s_, y_ in reversed(list(zip(s_list, y_list))):
            rho = 1.0 / (y_ @ s_)
            al = rho * (s_ @ q)
            alphas.append((rho, al))
            q -= al * y_
        if y_list:
            q *= (s_list[-1] @ y_list[-1]) / (y_list[-1] @ y_list[-1])
        else:
            q *= 1e-3 / max(1.0, np.abs(gflat).max())
        for (s_, y_), (rho, al) in zip(zip(s_list, y_list), reversed(alphas)):
            be = rho * (y_ @ q)
            q += (al - be) * s_
        direction = -q
        slope = gflat @ direction
        if slope >= 0:
            s_list.clear()
            y_list.clear()
            direction = -gflat * 1e-3 / max(1.0, np.abs(gflat).max())
            slope = gflat @ direction
        step = 1.0
        accepted = False
        for _ in range(50):
            cand = x + step * direction.reshape(x.shape)
            if dom.contains(cand):
                cand = _guard(cand, imap, a_reg)
                fc, gc, thc = evaluate(cand, theta)
                if fc <= f + 1e-4 * step * slope:
                    accepted = True
                    break
            step *= 0.5
        if not accepted:
            if s_list:
                s_list.clear()
                y_list.clear()
                it += 1
                continue
            converged = True
            break
        sv = (cand - x).ravel()
        yv = (gc - g).ravel()
        if sv @ yv > 1e-16 * (np.linalg.norm(sv) * np.linalg.norm(yv) + 1e-300):
            s_list.append(sv)
            y_list.append(yv)
            if len(s_list) > LBFGS_MEMORY:
                s_list.pop(0)
                y_list.pop(0)
        x, f, g, theta = cand, fc, gc, thc
        history.append(f)
        it += 1
        if len(history) > STALL_WINDOW and history[-1 - STALL_WINDOW] - f < tol:
            converged = True
            break
    path = Path(times, np.vstack([a, x, b]))
    return FixedHorizonResult(float(f), path, converged, it)


# ------------------------------------------------------------ over horizons

def quasipotential(model: Model, z_start, z_end, T_grid: Sequence[float] | None = None,
                   n_segments: int = N_SEGMENTS, golden_steps: int = GOLDEN_STEPS,
                   **opts) -> QuasipotentialResult:
    """inf over T of the fixed-horizon minimum, scanned over ``T_grid``
    (ascending, warm-started) and refined by golden-section search in log T."""
    a = require_in_A(z_start, model.d, "start")
    b = require_in_A(z_end, model.d, "end")
    grid = sorted(float(t) for t in (T_GRID if T_grid is None else T_grid))
    if not grid:
        raise ValueError("empty horizon grid")
    if np.array_equal(a, b):
        path = Path([0.0, grid[0]], np.vstack([a, b]))
        return QuasipotentialResult(0.0, path, grid[0], [(t, 0.0, True) for t in grid], True, b)

    runs: dict[float, FixedHorizonResult] = {}
    prev = None
    for T in grid:
        r = minimize_action_fixed_T(model, a, b, T, n_segments, init=prev, **opts)
        runs[T] = r
        if math.isfinite(r.action):
            prev = r.path

    def best_T():
        return min(runs, key=lambda t: runs[t].action)

    if len(grid) > 1 and golden_steps > 0:
        i = grid.index(best_T())
        lo = math.log(grid[max(i - 1, 0)])
        hi = math.log(grid[min(i + 1, len(grid) - 1)])
        r = (math.sqrt(5.0) - 1.0) / 2.0
        cache = {}

        def probe(u):
            if u not in cache:
                T = math.exp(u)
                seed = runs[min(runs, key=lambda t: abs(math.log(t) - u))].path
                res = minimize_action_fixed_T(model, a, b, T, n_segments, init=seed, **opts)
                runs[T] = res
                cache[u] = res.action
            return cache[u]

        x1, x2 = hi - r * (hi - lo), lo + r * (hi - lo)
        f1, f2 = probe(x1), probe(x2)
        for _ in range(golden_steps - 2):
            if f1 <= f2:
                hi, x2, f2 = x2, x1, f1
                x1 = hi - r * (hi - lo)
                f1 = probe(x1)
            else:
                lo, x1, f1 = x1, x2, f2
                x2 = lo + r * (hi - lo)
                f2 = probe(x2)

    T_star = best_T()
    best = runs[T_star]
    per_T = [(t, runs[t].action, runs[t].converged) for t in sorted(runs)]
    return QuasipotentialResult(best.action, best.path, T_star, per_T,
                                all(c for _, _, c in per_T), b,
                                minimizers={t: runs[t].path for t in sorted(runs)})


def boundary_quasipotential(model: Model, z_star, spec: DomainSpec, T_grid=None,
                            n_segments: int = N_SEGMENTS, a_end: float = A_END,
                            imap: InteriorMap | None = None, **opts) -> QuasipotentialResult:
    """Minimum over boundary samples of the quasipotential from ``z_star``.

    Samples lying on the boundary of A are first pulled inside with
    ``a_end``; the result's ``target`` is the point actually used.
    """
    samples = spec.samples(model.d)
    best = None
    for idx, y in enumerate(samples):
        target = regularize_endpoint(y, a_end, imap)
        res = quasipotential(model, z_star, target, T_grid, n_segments, **opts)
        res.sample_index = idx
        if best is None or res.value < best.value:
            best = res
    return best


# ------------------------------------------------------------ 1-D oracles

def _birth_death(model: Model):
    if model.d != 1 or model.k != 2:
        raise NotBirthDeath("need one compartment and two transitions")
    h = model.jumps[:, 0]
    if sorted(h.tolist()) != [-1, 1]:
        raise NotBirthDeath(f"jumps must be +1 and -1, got {h.tolist()}")
    return int(np.flatnonzero(h == 1)[0]), int(np.flatnonzero(h == -1)[0])


def _taylor(model: Model, j: int, x0: float, order: int = 8):
    """Taylor coefficients of beta_j about x0, lowest order first."""
    coef, exps = model.poly_arrays
    c, e = coef[j], exps[j, :, 0]
    out = []
    for n in range(order + 1):
        out.append(sum(ci * math.comb(int(ei), n) * x0 ** (int(ei) - n)
                       for ci, ei in zip(c, e) if ci != 0 and ei >= n))
    return out


def _log_ratio(model, jp, jm, x):
    r = model.rates(np.array([x]))
    bp, bm = float(r[jp]), float(r[jm])
    if bp > TOL_RATE and bm > TOL_RATE:
        return math.log(bm / bp)
    tp, tm = _taylor(model, jp, x), _taylor(model, jm, x)
    lead = lambda t: next((i for i, v in enumerate(t) if abs(v) > TOL_RATE), None)
    ip, im = lead(tp), lead(tm)
    if ip is None or im is None or ip != im:
        raise ValueError(f"log rate ratio is singular at x = {x}")
    return math.log(tm[im] / tp[ip])


def _adaptive_simpson(fn, a, b, tol, depth=50):
    def simpson(fa, fm, fb, a, b):
        return (b - a) / 6.0 * (fa + 4.0 * fm + fb)

    def rec(a, b, fa, fm, fb, whole, tol, depth):
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = fn(lm), fn(rm)
        left = simpson(fa, flm, fm, a, m)
        right = simpson(fm, frm, fb, m, b)
        if depth <= 0 or abs(left + right - whole) <= 15.0 * tol:
            return left + right + (left + right - whole) / 15.0
        return (rec(a, m, fa, flm, fm, left, tol / 2, depth - 1)
                + rec(m, b, fm, frm, fb, right, tol / 2, depth - 1))

    fa, fb, fm = fn(a), fn(b), fn(0.5 * (a + b))
    return rec(a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, depth)


def bd_quasipotential_1d(model: Model, x_from: float, x_to: float, tol: float = 1e-10) -> float:
    """Signed integral of log(beta_-/beta_+) from ``x_from`` to ``x_to``.

    Starting from a stable equilibrium this is the classical one-dimensional
    quasipotential, nonnegative in both directions.  Points where both rates
    vanish use the ratio of their leading Taylor terms.
    """
    jp, jm = _birth_death(model)
    if x_from == x_to:
        return 0.0
    return float(_adaptive_simpson(lambda x: _log_ratio(model, jp, jm, x), x_from, x_to, tol))


class ExitTimeResult(NamedTuple):
    value: float
    log_value: float
    overflow: bool


def bd_exact_mean_exit_time(model: Model, N: int, start_index: int) -> ExitTimeResult:
    """Mean absorption time at 0 of the chain on {0, ..., N}/N.

    From state m, E tau = sum_{k<=m} sum_{j>=k} (1/mu_j) prod_{k<=i<j} lambda_i/mu_i
    with lambda_n = N beta_+(n/N) and mu_n = N beta_-(n/N).  Terms are formed
    in log space and summed smallest first.
    """
    jp, jm = _birth_death(model)
    if not 1 <= start_index <= N:
        raise ValueError(f"start index must lie in 1..{N}")
    x = np.arange(N + 1) / N
    r = model.rates(x[:, None]) * N
    lam, mu = r[:, jp], r[:, jm]
    if lam[0] > TOL_RATE * N:
        raise NotBirthDeath("state 0 must be absorbing (birth rate vanishes at 0)")
    if lam[N] > TOL_RATE * N:
        raise NotBirthDeath("birth rate must vanish at the top state")
    if np.any(mu[1:] <= 0):
        raise NotBirthDeath("death rate must be positive away from 0")
    with np.errstate(divide="ignore"):
        step = np.log(lam[1:N]) - np.log(mu[1:N])           # i = 1 .. N-1
    C = np.concatenate([[0.0], np.cumsum(step)])             # C[j-1] = sum_{i<j}
    j = np.arange(1, N + 1)
    terms = []
    for k in range(1, start_index + 1):
        jj = j[k - 1:]
        terms.append(C[jj - 1] - C[k - 1] - np.log(mu[jj]))
    t = np.concatenate(terms)
    t = t[np.isfinite(t)]
    top = float(t.max())
    parts = np.sort(np.exp(t - top))
    log_value = top + math.log(math.fsum(parts))
    overflow = log_value > math.log(np.finfo(float).max)
    return ExitTimeResult(math.inf if overflow else math.exp(log_value), log_value, overflow)


def exit_time_prediction(V: float, N: int):
    """exp(N V) and its logarithm; the value is inf when it overflows."""
    if V < 0:
        raise ValueError("V must be nonnegative")
    log_value = N * V
    try:
        value = math.exp(log_value)
    except OverflowError:
        value = math.inf
    return value, log_value
