import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jumpldp.errors import ModelError, NegativeRate, OutOfDomain, UnknownIdentifier
from jumpldp.model import (DomainA, InteriorMap, Model, interior_shrink, load_model,
                           min_rate_on_Ba, simplex_lattice, validate_model)

from conftest import make_model


def test_bundled_models_load(sis, sir):
    assert (sis.d, sis.k) == (1, 2)
    assert (sir.d, sir.k) == (2, 2)
    assert sir.jumps.tolist() == [[-1, 1], [0, -1]]


def test_json_round_trip(tmp_path, sir):
    f = tmp_path / "m.json"
    f.write_text(json.dumps(sir.to_dict()))
    again = load_model(str(f))
    z = np.array([0.3, 0.4])
    np.testing.assert_array_equal(again.rates(z), sir.rates(z))


def test_rejects_long_jumps():
    with pytest.raises(ModelError):
        make_model("bad", ["x"], [("j", [2], "x")])


def test_rejects_zero_jump():
    with pytest.raises(ModelError):
        make_model("bad", ["x"], [("j", [0], "x")])


def test_rejects_missing_parameter():
    with pytest.raises(UnknownIdentifier):
        make_model("bad", ["x"], [("j", [1], "beta * x")])


def test_validate_sis(sis):
    rep = validate_model(sis)
    assert rep.sigma == pytest.approx(1.0, abs=1e-12)
    assert rep.boundary_consistent
    assert rep.violations == []


def test_validate_sir(sir):
    rep = validate_model(sir)
    assert rep.sigma == pytest.approx(1.0, abs=1e-12)
    assert rep.boundary_consistent


def test_negative_rate_reported():
    m = make_model("neg", ["i"], [("j", [-1], "-1 * i")])
    rep = validate_model(m)
    assert any("NegativeRate" in v for v in rep.violations)
    with pytest.raises(NegativeRate):
        validate_model(m, strict=True)


def test_inconsistent_boundary_detected(walk):
    assert not validate_model(walk).boundary_consistent


def test_sigma_bounds_every_grid_rate(sir):
    rep = validate_model(sir, resolution=50)
    grid = simplex_lattice(2, 50) / 50
    assert np.all(sir.rates(grid) <= rep.sigma + 1e-15)


def test_lipschitz_bound_on_random_pairs(sir, rng):
    rep = validate_model(sir)
    a = rng.dirichlet(np.ones(3), 2000)[:, :2]
    b = rng.dirichlet(np.ones(3), 2000)[:, :2]
    lhs = np.abs(sir.rates(a) - sir.rates(b)).max(axis=1)
    rhs = rep.lipschitz_C * np.linalg.norm(a - b, axis=1)
    assert np.all(lhs <= rhs + 1e-12)


def test_min_rate_on_shrunk_interval(sis):
    imap = InteriorMap(np.array([0.5]), 0.5, 0.25)
    bound = min_rate_on_Ba(sis, 0.4, imap)
    assert not bound.degenerate
    assert bound.value == pytest.approx(0.1, abs=1e-12)


def test_min_rate_degenerate_when_empty(sis):
    imap = InteriorMap(np.array([0.5]), 0.5, 0.25)
    bound = min_rate_on_Ba(sis, 3.0, imap)
    assert bound.degenerate and bound.value == 0.0


def test_min_rate_grows_as_set_shrinks(sir):
    small = min_rate_on_Ba(sir, 0.01).value
    large = min_rate_on_Ba(sir, 0.1).value
    assert 0 <= small <= large


def test_domain_membership_tolerance():
    dom = DomainA(2)
    assert dom.contains([0.5, 0.5 + 1e-13])
    assert not dom.contains([0.5, 0.5 + 1e-11])
    assert not dom.contains([-1e-11, 0.2])


def test_default_interior_map_constants():
    m1 = InteriorMap.default(1)
    assert (m1.c1, m1.c2) == pytest.approx((0.5, 0.5))
    m2 = InteriorMap.default(2)
    # c1 = |(1,0) - (1/3,1/3)|; the nearest face x+y=1 is sqrt(2)/6 away and
    # the sharpest angle is at its vertex (1,0): sin = (sqrt(2)/6) / c1
    assert m2.c1 == pytest.approx(math.sqrt(5) / 3, rel=1e-12)
    assert m2.c2 == pytest.approx(1 / (6 * math.sqrt(5)), rel=1e-12)


def test_shrink_examples():
    m2 = InteriorMap(np.array([1 / 3, 1 / 3]), 1.0, 0.1)
    np.testing.assert_allclose(interior_shrink([1.0, 0.0], 0.5, m2), [2 / 3, 1 / 6], atol=1e-15)
    np.testing.assert_allclose(interior_shrink(m2.z0, 0.3, m2), m2.z0, atol=1e-15)
    m1 = InteriorMap.default(1)
    assert interior_shrink([0.0], 0.1, m1)[0] == pytest.approx(0.05, abs=1e-15)
    with pytest.raises(OutOfDomain):
        interior_shrink([1.2], 0.1, m1)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=3, max_size=3), st.floats(1e-6, 0.999))
def test_shrink_clears_boundary(w, a):
    w = np.array(w) + 1e-9
    z = (w / w.sum())[:2]
    imap = InteriorMap.default(2)
    out = interior_shrink(z, a, imap)
    dom = DomainA(2)
    assert dom.contains(out)
    assert dom.distance_to_boundary(out) >= imap.c2 * a * (1 - 1e-9)
    assert np.linalg.norm(out - z) <= imap.c1 * a * (1 + 1e-12)


def test_simplex_lattice_counts():
    assert simplex_lattice(2, 4).shape[0] == 15
    assert simplex_lattice(1, 10).shape[0] == 11


def test_with_params(sis):
    m = sis.with_params(**{"lambda": 4.0})
    assert m.rates(np.array([0.5]))[0] == pytest.approx(1.0)
