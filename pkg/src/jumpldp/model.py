"""Compartmental models on the simplex A = {z >= 0, sum(z) <= 1}.

A :class:`Model` is the single source of the jump vectors ``h_j`` and rate
polynomials ``beta_j``.  This module also holds the interior-shrinking map
``z -> z + a (z0 - z)`` with its constants and the grid diagnostics for the
standing assumptions (sup bound, Lipschitz bound, minimal rate on the
shrunken sets B^a).
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path as FsPath
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .errors import ModelError, NegativeRate, OutOfDomain, RateSyntaxError
from .rates import RateExpr, parse_rate

TOL_A = 1e-12
TOL_RATE = 1e-12
DEFAULT_RESOLUTION = 200


@dataclass(frozen=True)
class Transition:
    name: str
    jump: tuple
    rate: RateExpr


@dataclass(frozen=True, eq=False)
class Model:
    """Density-dependent jump model.

    Transition ``j`` moves the scaled state by ``h_j / N`` at rate
    ``N * beta_j(z)``.  Rates are evaluated vectorized over leading axes of
    ``z``.
    """

    name: str
    compartments: tuple
    transitions: tuple
    params: Mapping[str, float] = field(default_factory=dict)
    _coef: np.ndarray = field(init=False, repr=False)
    _exps: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "compartments", tuple(self.compartments))
        object.__setattr__(self, "transitions", tuple(self.transitions))
        object.__setattr__(self, "params", dict(self.params))
        d = len(self.compartments)
        if d < 1:
            raise ModelError("a model needs at least one compartment")
        if not self.transitions:
            raise ModelError("a model needs at least one transition")
        for tr in self.transitions:
            if len(tr.jump) != d:
                raise ModelError(f"transition {tr.name!r}: jump has {len(tr.jump)} entries, expected {d}")
            if not any(tr.jump):
                raise ModelError(f"transition {tr.name!r}: zero jump vector")
            if any(abs(h) > 1 for h in tr.jump):
                raise ModelError(f"transition {tr.name!r}: jump entries must lie in {{-1, 0, 1}}")
            missing = [p for p in tr.rate.referenced_params() if p not in self.params]
            if missing:
                raise ModelError(f"transition {tr.name!r}: unbound parameters {missing}")
        bound = [tr.rate.bind(self.params) for tr in self.transitions]
        width = max(1, max(b.coef.size for b in bound))
        coef = np.zeros((len(bound), width))
        exps = np.zeros((len(bound), width, d), dtype=np.int64)
        for j, b in enumerate(bound):
            coef[j, : b.coef.size] = b.coef
            exps[j, : b.coef.size] = b.exps
        object.__setattr__(self, "_coef", coef)
        object.__setattr__(self, "_exps", exps)

    @property
    def d(self) -> int:
        return len(self.compartments)

    @property
    def k(self) -> int:
        return len(self.transitions)

    @property
    def jumps(self) -> np.ndarray:
        return np.array([tr.jump for tr in self.transitions], dtype=np.int64)

    @property
    def poly_arrays(self):
        """(coef (k, T), exps (k, T, d)) for compiled kernels."""
        return self._coef, self._exps

    def rates(self, z) -> np.ndarray:
        """beta_j(z) for all j; shape (..., k)."""
        z = np.asarray(z, dtype=float)
        mon = np.prod(z[..., None, None, :] ** self._exps, axis=-1)
        return np.sum(mon * self._coef, axis=-1)

    def rate_gradients(self, z) -> np.ndarray:
        """grad beta_j(z); shape (..., k, d)."""
        z = np.asarray(z, dtype=float)
        out = np.zeros(z.shape[:-1] + (self.k, self.d))
        for i in range(self.d):
            e = self._exps[..., i]
            de = self._exps.copy()
            de[..., i] = np.maximum(de[..., i] - 1, 0)
            mon = np.prod(z[..., None, None, :] ** de, axis=-1)
            out[..., i] = np.sum(mon * (self._coef * e), axis=-1)
        return out

    def with_params(self, **values) -> "Model":
        params = dict(self.params)
        params.update(values)
        return Model(self.name, self.compartments, self.transitions, params)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "compartments": list(self.compartments),
            "params": dict(self.params),
            "transitions": [
                {"name": tr.name, "jump": list(tr.jump), "rate": tr.rate.source or tr.rate.unparse()}
                for tr in self.transitions
            ],
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "Model":
        try:
            compartments = [str(c) for c in doc["compartments"]]
            params = {str(k): float(v) for k, v in doc.get("params", {}).items()}
            transitions = []
            for t in doc["transitions"]:
                rate = parse_rate(str(t["rate"]), compartments, list(params))
                jump = tuple(int(h) for h in t["jump"])
                transitions.append(Transition(str(t.get("name", f"t{len(transitions)}")), jump, rate))
            name = str(doc.get("name", "model"))
        except RateSyntaxError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelError(f"malformed model document: {exc}") from exc
        return cls(name, tuple(compartments), tuple(transitions), params)


def load_model(path) -> Model:
    """Read a model JSON file.

    A bare name such as ``"sis"`` that is not an existing file resolves to
    the bundled model of that name.
    """
    p = FsPath(path)
    if p.exists():
        text = p.read_text()
    else:
        stem = p.stem if p.suffix == ".json" else str(path)
        try:
            text = resources.files("jumpldp").joinpath("data", f"{stem}.json").read_text()
        except (FileNotFoundError, OSError):
            raise ModelError(f"model file not found: {path}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(f"model file is not valid JSON: {exc}") from exc
    return Model.from_dict(doc)


class DomainA:
    """The simplex A = {z in R_+^d : sum z_i <= 1}."""

    def __init__(self, d: int, tol: float = TOL_A):
        self.d = d
        self.tol = tol

    def contains(self, z) -> bool:
        z = np.asarray(z, dtype=float)
        if z.shape[-1] != self.d:
            return False
        return bool(np.all(z >= -self.tol) and np.all(z.sum(axis=-1) <= 1 + self.tol))

    def distance_to_boundary(self, z):
        """Euclidean distance to the boundary for points of A."""
        z = np.asarray(z, dtype=float)
        return np.minimum(z.min(axis=-1), (1.0 - z.sum(axis=-1)) / math.sqrt(self.d))

    def vertices(self) -> np.ndarray:
        return np.vstack([np.zeros(self.d), np.eye(self.d)])

    def faces(self):
        """(unit normal n, offset c) with face = {n.z = c}, interior n.z > c."""
        out = [(np.eye(self.d)[i], 0.0) for i in range(self.d)]
        out.append((-np.ones(self.d) / math.sqrt(self.d), -1.0 / math.sqrt(self.d)))
        return out


def require_in_A(z, d=None, what="state"):
    z = np.asarray(z, dtype=float)
    if d is not None and z.shape != (d,):
        raise OutOfDomain(f"{what} has shape {z.shape}, expected ({d},)")
    if not DomainA(z.shape[-1]).contains(z):
        raise OutOfDomain(f"{what} {z.tolist()} is not in A")
    return z


@dataclass(frozen=True)
class InteriorMap:
    """Shrinking map ``z -> z + a (z0 - z)`` with |z - z^a| <= c1 a and
    dist(z^a, boundary) >= c2 a."""

    z0: np.ndarray
    c1: float
    c2: float

    def __post_init__(self):
        z0 = np.asarray(self.z0, dtype=float)
        object.__setattr__(self, "z0", z0)
        if not (np.all(z0 > 0) and z0.sum() < 1):
            raise OutOfDomain(f"anchor {z0.tolist()} is not strictly interior")
        if not (0 < self.c2 <= self.c1):
            raise ValueError(f"need 0 < c2 <= c1, got c1={self.c1}, c2={self.c2}")

    @classmethod
    def default(cls, d: int, z0=None) -> "InteriorMap":
        """Constants from the anchor: c1 = max distance to a vertex and
        c2 = sin(theta0) * dist(z0, boundary), theta0 the most acute angle
        between a face and the ray from one of its points to z0."""
        dom = DomainA(d)
        z0 = np.full(d, 1.0 / (d + 1)) if z0 is None else np.asarray(z0, dtype=float)
        verts = dom.vertices()
        c1 = float(np.max(np.linalg.norm(verts - z0, axis=1)))
        faces = dom.faces()
        dist = min(float(n @ z0 - c) for n, c in faces)
        # the angle is smallest at the vertices of each face
        sin_theta0 = 1.0
        for n, c in faces:
            h = float(n @ z0 - c)
            on_face = [v for v in verts if abs(n @ v - c) <= 1e-12]
            for v in on_face:
                r = float(np.linalg.norm(z0 - v))
                sin_theta0 = min(sin_theta0, h / r)
        return cls(z0, c1, sin_theta0 * dist)

    def shrink(self, z, a):
        z = np.asarray(z, dtype=float)
        return z + a * (self.z0 - z)


def interior_shrink(z, a: float, imap: InteriorMap):
    """Return ``z + a (z0 - z)``; raises :class:`OutOfDomain` if z is not in A."""
    if not 0 < a < 1:
        raise ValueError(f"shrink factor must lie in (0, 1), got {a}")
    z = np.asarray(z, dtype=float)
    if not DomainA(z.shape[-1]).contains(z):
        raise OutOfDomain(f"state {z.tolist()} is not in A")
    return imap.shrink(z, a)


def simplex_lattice(d: int, n: int) -> np.ndarray:
    """All points of A with coordinates in {0, 1/n, ..., 1}."""
    # stars and bars: d bars among n + d slots, the last group is slack
    pts = []
    for bars in itertools.combinations(range(n + d), d):
        prev = -1
        counts = []
        for b in bars:
            counts.append(b - prev - 1)
            prev = b
        pts.append(counts)
    return np.asarray(pts, dtype=float) / n


class RateBound(NamedTuple):
    value: float
    degenerate: bool


def _shrunk_set_grid(d, r, resolution):
    """Lattice over B = {z_i >= r, (1 - sum z)/sqrt(d) >= r}; None if empty."""
    side = 1.0 - d * r - math.sqrt(d) * r
    if side < -1e-15:
        return None
    side = max(side, 0.0)
    return r + side * simplex_lattice(d, resolution)


def min_rate_on_Ba(model: Model, a: float, imap: InteriorMap | None = None,
                   resolution: int = DEFAULT_RESOLUTION) -> RateBound:
    """Grid minimum over B^a = {dist(z, boundary) >= c2 a} of min_j beta_j."""
    if a <= 0:
        raise ValueError("a must be positive")
    imap = imap or InteriorMap.default(model.d)
    grid = _shrunk_set_grid(model.d, imap.c2 * a, resolution)
    if grid is None:
        return RateBound(0.0, True)
    return RateBound(float(model.rates(grid).min()), False)


@dataclass(frozen=True)
class AssumptionReport:
    sigma: float
    lipschitz_C: float
    C_a_samples: dict
    boundary_consistent: bool
    violations: list
    resolution: int
    n_ref: int

    def to_dict(self) -> dict:
        return {
            "sigma": self.sigma,
            "lipschitz_C": self.lipschitz_C,
            "C_a": {repr(a): v for a, v in self.C_a_samples.items()},
            "boundary_consistent": self.boundary_consistent,
            "violations": list(self.violations),
            "resolution": self.resolution,
            "n_ref": self.n_ref,
        }


def validate_model(model: Model, resolution: int = DEFAULT_RESOLUTION,
                   a_values: Sequence[float] = (0.1, 0.01), imap: InteriorMap | None = None,
                   n_ref: int = 1000, strict: bool = False) -> AssumptionReport:
    """Grid diagnostics for the standing assumptions.

    Negative rates are listed in ``violations``; with ``strict=True`` they
    raise :class:`NegativeRate` instead.
    """
    grid = simplex_lattice(model.d, resolution)
    rates = model.rates(grid)
    grads = model.rate_gradients(grid)
    violations = []

    neg = rates < -TOL_RATE
    if neg.any():
        g, j = np.argwhere(neg)[0]
        msg = (f"NegativeRate: transition {model.transitions[j].name!r} has rate "
               f"{rates[g, j]:.3g} at {grid[g].tolist()}")
        if strict:
            raise NegativeRate(msg)
        violations.append(msg)

    sigma = float(rates.max())
    lip = float(np.linalg.norm(grads, axis=-1).max() * math.sqrt(model.d))

    consistent = True
    jumps = model.jumps
    for j in range(model.k):
        after = grid + jumps[j] / n_ref
        exits = (after < -TOL_A).any(axis=1) | (after.sum(axis=1) > 1 + TOL_A)
        bad = exits & (rates[:, j] > TOL_RATE)
        if bad.any():
            consistent = False
            g = np.flatnonzero(bad)[0]
            violations.append(
                f"BoundaryInconsistent: transition {model.transitions[j].name!r} has rate "
                f"{rates[g, j]:.3g} at {grid[g].tolist()} where its jump leaves A"
            )

    imap = imap or InteriorMap.default(model.d)
    C_a = {}
    for a in a_values:
        C_a[float(a)] = min_rate_on_Ba(model, a, imap, resolution).value
    if sigma <= 0:
        violations.append("sigma is not positive: every rate vanishes on the grid")
    return AssumptionReport(sigma, lip, C_a, consistent, violations, resolution, n_ref)
