"""Path-space cost of the jump process.

The local cost of moving with velocity ``y`` at state ``z`` is

    L(z, y) = sup_theta <theta, y> - sum_j beta_j(z) (exp<theta, h_j> - 1),

equivalently the minimum of ``sum_j f(mu_j, beta_j(z))`` over intensities
``mu >= 0`` with ``sum_j mu_j h_j = y``, where
``f(nu, w) = nu log(nu / w) - nu + w``.  The optimal intensities are
``mu_j = beta_j exp<theta*, h_j>``.

The dual is solved by damped Newton from ``theta = 0``.  Infinite values
are decided beforehand by a nonnegative least-squares feasibility test.
When ``y`` lies on a proper face of the cone spanned by the available
jumps, the supremum is only reached as ``|theta| -> inf``; the jumps
outside the minimal face carry zero intensity in the limit, so the face is
found by linear programming and Newton runs on the reduced problem.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import linprog, nnls

from .dynamics import Path
from .errors import BadEpsilon, NoConvergence
from .model import TOL_RATE, InteriorMap, Model, require_in_A

GL_ORDER = 8
TOL_FEAS = 1e-7
NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 200
THETA_LIMIT = 1e3
_REG = 1e-12
_FACE_TOL = 1e-12


def f_cost(nu, omega):
    """f(nu, w) = nu log(nu/w) - nu + w with f(0, w) = w, f(nu > 0, 0) = inf."""
    nu = np.asarray(nu, dtype=float)
    omega = np.asarray(omega, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        core = nu * np.log(nu / omega) - nu + omega
    out = np.where(nu == 0, omega, np.where(omega == 0, np.inf, core))
    return out[()] if out.ndim == 0 else out


@dataclass(frozen=True)
class LagrangianResult:
    value: float
    theta_star: np.ndarray | None
    mu_star: np.ndarray | None
    iterations: int
    on_face: bool = False

    @property
    def finite(self) -> bool:
        return math.isfinite(self.value)

    def to_dict(self) -> dict:
        return {
            "L": self.value,
            "theta": None if self.theta_star is None else self.theta_star.tolist(),
            "mu": None if self.mu_star is None else self.mu_star.tolist(),
            "iterations": self.iterations,
        }


class DualSolution(NamedTuple):
    value: np.ndarray       # (M,) with inf where infeasible
    theta: np.ndarray       # (M, d)
    mu: np.ndarray          # (M, k)
    tilt: np.ndarray        # (M, k): exp<theta, h_j> on the face, 0 off it
    finite: np.ndarray      # (M,)
    converged: np.ndarray   # (M,)
    iterations: np.ndarray  # (M,)
    on_face: np.ndarray     # (M,) some active jump is switched off


# ------------------------------------------------------------ cone geometry

def _in_cone(Hp, y):
    """Nonnegative least-squares residual of y against the rows of Hp."""
    _, res = nnls(Hp.T.astype(float), np.asarray(y, dtype=float))
    return res


def _cone_is_full(Hp):
    d = Hp.shape[1]
    if np.linalg.matrix_rank(Hp) < d:
        return False
    for i in range(d):
        for s in (1.0, -1.0):
            e = np.zeros(d)
            e[i] = s
            if _in_cone(Hp, e) > 1e-9:
                return False
    return True


def _minimal_face(Hp, y):
    """Jumps that carry positive intensity in some representation of y."""
    kp = Hp.shape[0]
    out = np.zeros(kp, dtype=bool)
    A_eq = Hp.T.astype(float)
    for j in range(kp):
        c = np.zeros(kp)
        c[j] = -1.0
        bounds = [(0, None)] * kp
        bounds[j] = (0, 1.0)
        res = linprog(c, A_eq=A_eq, b_eq=y, bounds=bounds, method="highs")
        out[j] = res.status == 0 and -res.fun > _FACE_TOL
    return out


def _classify(beta, H, Y, tol_rate):
    """Feasibility and minimal-face masks, per point."""
    M, k = beta.shape
    active = beta > tol_rate
    finite = np.ones(M, dtype=bool)
    face = np.zeros((M, k), dtype=bool)
    patterns, inverse = np.unique(active, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).reshape(-1)
    for pi, pat in enumerate(patterns):
        rows = np.flatnonzero(inverse == pi)
        cols = np.flatnonzero(pat)
        Yp = Y[rows]
        if cols.size == 0:
            finite[rows] = np.linalg.norm(Yp, axis=1) <= TOL_FEAS
            continue
        Hp = H[cols].astype(float)
        if _cone_is_full(Hp):
            face[np.ix_(rows, cols)] = True
            continue
        if np.linalg.matrix_rank(Hp) == cols.size:
            mu, *_ = np.linalg.lstsq(Hp.T, Yp.T, rcond=None)
            mu = mu.T
            resid = np.linalg.norm(mu @ Hp - Yp, axis=1)
            ok = (resid <= TOL_FEAS) & (mu.min(axis=1) >= -TOL_FEAS)
            finite[rows] = ok
            scale = np.maximum(1.0, np.linalg.norm(Yp, axis=1))[:, None]
            face[np.ix_(rows, cols)] = (mu > _FACE_TOL * scale) & ok[:, None]
            continue
        for r in rows:
            if _in_cone(Hp, Y[r]) > TOL_FEAS:
                finite[r] = False
            else:
                face[r, cols] = _minimal_face(Hp, Y[r])
    return active, finite, face


# ------------------------------------------------------------ Newton ascent

def _face_projectors(face, H):
    """(M, d, d) orthogonal projectors onto the span of each point's face jumps."""
    M, d = face.shape[0], H.shape[1]
    out = np.zeros((M, d, d))
    patterns, inverse = np.unique(face, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).reshape(-1)
    for pi, pat in enumerate(patterns):
        if not pat.any():
            continue
        _, sv, vt = np.linalg.svd(H[pat])
        rank = int(np.sum(sv > 1e-12 * sv.max()))
        basis = vt[:rank]
        out[inverse == pi] = basis.T @ basis
    return out


def _objective(theta, Y, beff, H):
    E = np.exp(theta @ H.T)
    return np.einsum("md,md->m", theta, Y) - np.sum(beff * (E - 1.0), axis=1), E


def solve_dual(beta, H, Y, theta0=None, tol_rate=TOL_RATE, tol=NEWTON_TOL,
               max_iter=NEWTON_MAX_ITER) -> DualSolution:
    """Batched Legendre dual for rates ``beta`` (M, k), jumps ``H`` (k, d),
    velocities ``Y`` (M, d)."""
    beta = np.asarray(beta, dtype=float)
    Y = np.asarray(Y, dtype=float)
    H = np.asarray(H, dtype=float)
    M, k = beta.shape
    d = H.shape[1]
    active, finite, face = _classify(beta, H, Y, tol_rate)
    beff = np.where(face, beta, 0.0)
    proj = _face_projectors(face, H)
    theta = np.zeros((M, d)) if theta0 is None else np.array(theta0, dtype=float)
    theta = np.einsum("mij,mj->mi", proj, theta)
    theta[~finite] = 0.0
    iters = np.zeros(M, dtype=np.int64)
    converged = np.zeros(M, dtype=bool)
    eye = np.eye(d)
    eps = np.finfo(float).eps

    work = np.flatnonzero(finite)
    for it in range(max_iter + 1):
        if work.size == 0:
            break
        th = theta[work]
        yw = Y[work]
        bw = beff[work]
        ell, E = _objective(th, yw, bw, H)
        w = bw * E
        pw = proj[work]
        # the part of y off the face span is infeasibility below tolerance
        g = np.einsum("mij,mj->mi", pw, yw - w @ H)
        gn = np.linalg.norm(g, axis=1)
        done = gn <= tol
        converged[work[done]] = True
        iters[work[done]] = it
        keep = ~done & (np.abs(th).max(axis=1) <= THETA_LIMIT)
        if it == max_iter:
            iters[work[~done]] = it
            break
        work, th, yw, bw, ell, g, w = work[keep], th[keep], yw[keep], bw[keep], ell[keep], g[keep], w[keep]
        if work.size == 0:
            break
        A = np.einsum("mk,ki,kj->mij", w, H, H) + _REG * eye
        step = np.linalg.solve(A, g[..., None])[..., 0]
        gs = np.einsum("md,md->m", g, step)
        alpha = np.ones(work.size)
        pending = np.arange(work.size)
        new_th = th.copy()
        for _ in range(60):
            cand = th[pending] + alpha[pending, None] * step[pending]
            with np.errstate(over="ignore", invalid="ignore"):
                ell_c, _ = _objective(cand, yw[pending], bw[pending], H)
            slack = 4 * eps * (np.abs(ell[pending]) + 1.0)
            ok = np.isfinite(ell_c) & (ell_c >= ell[pending] + 1e-4 * alpha[pending] * gs[pending] - slack)
            new_th[pending[ok]] = cand[ok]
            pending = pending[~ok]
            if pending.size == 0:
                break
            alpha[pending] *= 0.5
        theta[work] = new_th
    iters[~finite] = 0

    with np.errstate(over="ignore"):
        ell, E = _objective(theta, Y, beff, H)
    tilt = np.where(face, E, 0.0)
    mu = beff * E
    off = np.where(face, 0.0, np.maximum(beta, 0.0)).sum(axis=1)
    value = np.where(finite, ell + off, np.inf)
    on_face = finite & np.any(active & ~face, axis=1)
    return DualSolution(value, theta, mu, tilt, finite, converged | ~finite, iters, on_face)


def local_lagrangian(model: Model, z, y, tol_rate=TOL_RATE) -> LagrangianResult:
    """L(z, y) with the maximizing dual point and optimal intensities."""
    z = require_in_A(z, model.d).reshape(1, -1)
    y = np.asarray(y, dtype=float).reshape(1, -1)
    if y.shape[1] != model.d:
        raise ValueError(f"velocity has {y.shape[1]} components, model has {model.d}")
    sol = solve_dual(model.rates(z), model.jumps, y, tol_rate=tol_rate)
    if not sol.converged[0]:
        raise NoConvergence(
            "Newton ascent on the Legendre dual did not converge",
            {"z": z[0].tolist(), "y": y[0].tolist(), "theta": sol.theta[0].tolist(),
             "iterations": int(sol.iterations[0])},
        )
    if not sol.finite[0]:
        return LagrangianResult(math.inf, None, None, 0)
    return LagrangianResult(float(sol.value[0]), sol.theta[0].copy(), sol.mu[0].copy(),
                            int(sol.iterations[0]), bool(sol.on_face[0]))


# ------------------------------------------------------------ path actions

def gauss_legendre(order=GL_ORDER):
    """Nodes in (0, 1) and weights summing to 1."""
    x, w = np.polynomial.legendre.leggauss(order)
    return (x + 1.0) / 2.0, w / 2.0


def _quadrature_points(states, times, order):
    u, w = gauss_legendre(order)
    dt = np.diff(times)
    x0 = states[:-1]
    dx = np.diff(states, axis=0)
    z = x0[:, None, :] + u[None, :, None] * dx[:, None, :]
    slopes = dx / dt[:, None]
    return z, slopes, u, w, dt


def _endpoint_feasible(model, states, slopes):
    """Both ends of every segment can carry its slope."""
    m, d = slopes.shape
    zz = np.concatenate([states[:-1], states[1:]])
    yy = np.concatenate([slopes, slopes])
    _, finite, _ = _classify(model.rates(zz), model.jumps.astype(float), yy, TOL_RATE)
    return bool(finite.all())


def _evaluate(model, states, times, order, theta0=None):
    z, slopes, u, w, dt = _quadrature_points(states, times, order)
    m, Q, d = z.shape
    Y = np.repeat(slopes, Q, axis=0)
    sol = solve_dual(model.rates(z.reshape(-1, d)), model.jumps, Y, theta0=theta0)
    return z, slopes, u, w, dt, sol


def path_action(model: Model, path: Path, order: int = GL_ORDER) -> float:
    """Gauss-Legendre quadrature (per segment) of L(phi_t, phi'_t).

    Infinite when some quadrature node or segment end cannot carry the
    segment's velocity, e.g. a path touching the boundary where the needed
    rates vanish.
    """
    states, times = path.states, path.times
    if not _endpoint_feasible(model, states, path.slopes()):
        return math.inf
    z, slopes, u, w, dt, sol = _evaluate(model, states, times, order)
    if not sol.converged.all():
        bad = int(np.flatnonzero(~sol.converged)[0] // len(u))
        raise NoConvergence(f"Legendre dual did not converge on segment {bad}", {"segment": bad})
    if not sol.finite.all():
        return math.inf
    vals = sol.value.reshape(len(dt), len(u))
    return float(np.sum(dt * (vals @ w)))


def action_gradient(model: Model, states, times, order: int = GL_ORDER, theta0=None):
    """Action of the polygonal path and its gradient with respect to every node.

    Uses the envelope identities dL/dy = theta* and
    dL/dz = -sum_j grad beta_j(z) (exp<theta*, h_j> - 1).
    Returns (value, grad (m+1, d), theta (for warm starts)).
    """
    states = np.asarray(states, dtype=float)
    times = np.asarray(times, dtype=float)
    z, slopes, u, w, dt, sol = _evaluate(model, states, times, order, theta0)
    m, Q, d = z.shape
    if not (sol.finite.all() and sol.converged.all()):
        return math.inf, np.zeros_like(states), sol.theta
    vals = sol.value.reshape(m, Q)
    value = float(np.sum(dt * (vals @ w)))
    gb = model.rate_gradients(z.reshape(-1, d))                      # (M, k, d)
    Lz = -np.einsum("mkd,mk->md", gb, sol.tilt - 1.0).reshape(m, Q, d)
    Ly = sol.theta.reshape(m, Q, d)
    wq = w[None, :, None]
    # segment i contributes to nodes i (weight 1 - u) and i + 1 (weight u)
    left = dt[:, None] * np.sum(wq * ((1.0 - u)[None, :, None] * Lz), axis=1) - np.sum(wq * Ly, axis=1)
    right = dt[:, None] * np.sum(wq * (u[None, :, None] * Lz), axis=1) + np.sum(wq * Ly, axis=1)
    grad = np.zeros_like(states)
    grad[:-1] += left
    grad[1:] += right
    return value, grad, sol.theta


def optimal_controls(model: Model, path: Path, order: int = GL_ORDER):
    """Optimal intensities at the quadrature nodes: (times (m, Q), mu (m, Q, k))."""
    z, slopes, u, w, dt, sol = _evaluate(model, path.states, path.times, order)
    m, Q, d = z.shape
    t = path.times[:-1, None] + u[None, :] * dt[:, None]
    return t, sol.mu.reshape(m, Q, model.k)


@dataclass(frozen=True, eq=False)
class ControlledPath:
    """Polygonal path with one constant intensity vector per segment."""

    path: Path
    mu: np.ndarray
    jumps: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        object.__setattr__(self, "mu", mu)
        if mu.shape[0] != self.path.m:
            raise ValueError(f"{mu.shape[0]} control vectors for {self.path.m} segments")
        if np.any(mu < 0):
            raise ValueError("intensities must be nonnegative")
        gap = np.abs(mu @ np.asarray(self.jumps, dtype=float) - self.path.slopes()).max()
        if gap > 1e-8:
            raise ValueError(f"controls do not reproduce the path velocity (gap {gap:.3g})")

    @classmethod
    def for_model(cls, model: Model, path: Path, mu) -> "ControlledPath":
        return cls(path, mu, model.jumps)


def mu_action(model: Model, cpath: ControlledPath, order: int = GL_ORDER, tol: float = TOL_RATE) -> float:
    """Quadrature of sum_j f(mu_j, beta_j(phi_t)) for piecewise-constant controls."""
    z, slopes, u, w, dt = _quadrature_points(cpath.path.states, cpath.path.times, order)
    beta = model.rates(z)                                  # (m, Q, k)
    mu = np.broadcast_to(cpath.mu[:, None, :], beta.shape)
    if np.any((mu > tol) & (beta <= tol)):
        return math.inf
    beta = np.where(beta <= tol, 0.0, beta)
    mu = np.where(mu <= tol, 0.0, mu)
    vals = f_cost(mu, beta).sum(axis=-1)
    return float(np.sum(dt * (vals @ w)))


def polygonalize(obj, epsilon: float) -> Path:
    """Polygonal interpolation of a Path or Trajectory at the times l * epsilon.

    Trajectories are sampled right-continuously.
    """
    T = float(obj.T)
    if epsilon <= 0:
        raise BadEpsilon("epsilon must be positive")
    n = int(round(T / epsilon))
    if n < 1 or abs(n * epsilon - T) > 1e-12 * max(1.0, T):
        raise BadEpsilon(f"epsilon={epsilon} does not divide T={T}")
    t0 = float(obj.times[0]) if isinstance(obj, Path) else 0.0
    times = t0 + np.arange(n + 1) * epsilon
    times[-1] = t0 + T
    return Path(times, obj.state_at(times))


def shrink_path(path: Path, a: float, imap: InteriorMap) -> Path:
    """Node-wise interior shrink; the result stays at distance >= c2 a from the boundary."""
    if not 0 < a < 1:
        raise ValueError(f"shrink factor must lie in (0, 1), got {a}")
    return Path(path.times, imap.shrink(path.states, a))


class WindowBound(NamedTuple):
    max_ratio: float
    windows: int
    worst: tuple | None


def window_bound_check(model: Model, path: Path, s: float, sigma: float,
                       order: int = GL_ORDER) -> WindowBound:
    """Compare int_{t1}^{t2} mu_j dt with (s + 1) / (-log(sigma (t2 - t1)))
    for every pair of path nodes with t2 - t1 < 1/sigma, mu the optimal
    controls along ``path``.

    ``max_ratio`` <= 1 means the bound holds on every window.
    """
    t, mu = optimal_controls(model, path, order)
    _, w = gauss_legendre(order)
    dt = np.diff(path.times)
    seg = dt[:, None] * np.einsum("mqk,q->mk", mu, w)
    cum = np.vstack([np.zeros((1, model.k)), np.cumsum(seg, axis=0)])
    span = path.times[None, :] - path.times[:, None]
    mask = (span > 0) & (span < 1.0 / sigma)
    if not mask.any():
        return WindowBound(0.0, 0, None)
    a, b = np.nonzero(mask)
    integrals = cum[b] - cum[a]
    bound = (s + 1.0) / (-np.log(sigma * span[a, b]))
    ratio = integrals / bound[:, None]
    flat = int(np.argmax(ratio))
    i, j = divmod(flat, model.k)
    worst = (float(path.times[a[i]]), float(path.times[b[i]]), j, float(integrals[i, j]), float(bound[i]))
    return WindowBound(float(ratio.max()), int(a.size), worst)
