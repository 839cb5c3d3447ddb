import io
import math

import numpy as np
import pytest
from scipy import stats

from jumpldp.dynamics import integrate_ode
from jumpldp.errors import HorizonMismatch, LeftDomain, PreconditionError, ReplicateError
from jumpldp.quasipotential import bd_exact_mean_exit_time
from jumpldp.stochastic import (Ensemble, LLNReplicate, Region, exit_time_ensemble, lln_distance,
                                map_replicates, monte_carlo, replicate_rng, sample_exit_time,
                                scaled_counts, simulate)


def test_initial_state_is_floored(sir):
    tr = simulate(sir, 7, [0.5, 0.3], 0.01, seed=1)
    np.testing.assert_array_equal(tr.counts_init, [3, 2])
    assert scaled_counts([0.3], 10)[0] == 3  # 10 * 0.3 is 2.9999999999999996 in floating point


def test_absorbed_start_has_no_events(sis):
    tr = simulate(sis, 100, [0.0], 5.0, seed=3)
    assert tr.n_events == 0 and tr.absorbed


def test_same_seed_same_trajectory(sir):
    a = simulate(sir, 200, [0.9, 0.05], 3.0, seed=42)
    b = simulate(sir, 200, [0.9, 0.05], 3.0, seed=42)
    np.testing.assert_array_equal(a.times, b.times)
    np.testing.assert_array_equal(a.transitions, b.transitions)
    c = simulate(sir, 200, [0.9, 0.05], 3.0, seed=42, replicate=1)
    assert not np.array_equal(a.times, c.times)


def test_states_stay_on_lattice(sir):
    tr = simulate(sir, 300, [0.9, 0.1], 10.0, seed=5)
    counts = tr.counts()
    assert counts.min() >= 0 and counts.sum(axis=1).max() <= 300
    assert np.all(np.diff(tr.times) > 0) and tr.times[-1] <= 10.0


def test_left_domain_reports_transition(walk):
    with pytest.raises(LeftDomain) as info:
        simulate(walk, 2, [0.0], 50.0, seed=0)
    assert info.value.transition in (0, 1)
    assert info.value.state is not None


def _counts(walk, reps):
    out = np.empty((reps, 2), dtype=np.int64)
    for r in range(reps):
        out[r] = simulate(walk, 100, [0.5], 1.0, seed=9, replicate=r).event_counts(2)
    return out


def test_constant_rate_counts_are_poisson(walk):
    counts = _counts(walk, 10_000)
    total = counts.sum(axis=1)
    se = total.std(ddof=1) / math.sqrt(total.size)
    assert abs(total.mean() - 100.0) <= 3 * se
    # each transition is Poisson(N T beta) = Poisson(50)
    for j in range(2):
        x = counts[:, j]
        edges = np.arange(30, 72)
        observed = np.array([np.sum(x < edges[0])] + [np.sum(x == e) for e in edges[:-1]]
                            + [np.sum(x >= edges[-1])])
        probs = np.concatenate([[stats.poisson.cdf(edges[0] - 1, 50)],
                                stats.poisson.pmf(edges[:-1], 50),
                                [stats.poisson.sf(edges[-1] - 1, 50)]])
        assert stats.chisquare(observed, probs * x.size).pvalue > 0.001
    # independent across transitions
    assert stats.pearsonr(counts[:, 0], counts[:, 1]).pvalue > 0.001


def test_lln_distance_zero_for_matching_path(sis):
    tr = simulate(sis, 50, [0.0], 2.0, seed=0)
    assert lln_distance(tr, integrate_ode(sis, [0.0], 2.0, 0.1)) == 0.0


def test_lln_distance_bounds(sir):
    tr = simulate(sir, 100, [0.8, 0.2], 2.0, seed=0)
    dist = lln_distance(tr, integrate_ode(sir, [0.8, 0.2], 2.0, 0.01))
    assert 0.0 <= dist <= 2.0 * math.sqrt(2)


def test_lln_horizon_mismatch(sis):
    tr = simulate(sis, 50, [0.1], 2.0, seed=0)
    with pytest.raises(HorizonMismatch):
        lln_distance(tr, integrate_ode(sis, [0.1], 3.0, 0.1))


def test_lln_golden_large_population(sis):
    path = integrate_ode(sis, [0.1], 10.0)
    ens = monte_carlo(LLNReplicate(sis, 10_000, (0.1,), path), 100, base_seed=2024)
    assert np.median(ens.values) <= 0.05


def test_region_parsing(sir):
    reg = Region.parse("s<=0.9, i>0", sir.compartments)
    assert reg([0.5, 0.1]) and not reg([0.95, 0.01]) and not reg([0.5, 0.0])
    with pytest.raises(ValueError):
        Region.parse("q>0", sir.compartments)
    with pytest.raises(ValueError):
        Region.parse("i>>0", sir.compartments)


def test_exit_precondition(sis):
    with pytest.raises(PreconditionError):
        sample_exit_time(sis, 10, [0.0], Region.parse("i>0", ["i"]), 10.0)


def test_exit_censoring(sis):
    s = sample_exit_time(sis, 200, [0.5], Region.parse("i>0", ["i"]), 1.0, seed=1)
    assert s.censored and s.censored_at == 1.0 and s.tau is None


def test_exit_state_outside_domain(sis):
    s = sample_exit_time(sis, 10, [0.5], Region.parse("i>0", ["i"]), 1e6, seed=1)
    assert not s.censored and s.exit_state[0] == 0.0


def test_small_population_extinction_is_certain(sis):
    reg = Region.parse("i>0", ["i"])
    taus = [sample_exit_time(sis, 10, [0.5], reg, 1e6, seed=7, replicate=r) for r in range(100)]
    assert not any(s.censored for s in taus)


@pytest.mark.parametrize("predicate", ["region", "callable"])
def test_exit_mean_matches_exact_oracle(sis, predicate):
    reg = Region.parse("i>0", ["i"])
    domain = reg if predicate == "region" else (lambda z: z[0] > 0)
    ens = exit_time_ensemble(sis, 12, [0.5], domain, 1e6, 2000, base_seed=11)
    exact = bd_exact_mean_exit_time(sis, 12, 6).value
    assert ens.extra["censored"] == 0
    assert abs(ens.mean - exact) <= 3 * ens.se


def test_single_replicate_ensemble():
    ens = monte_carlo(lambda rng: rng.random(), 1, base_seed=5)
    assert ens.mean == ens.values[0] and ens.variance == 0.0


def test_exponential_mean():
    ens = monte_carlo(lambda rng: rng.exponential(), 100_000, base_seed=77)
    assert abs(ens.mean - 1.0) <= 0.01 and abs(ens.mean - 1.0) <= 3 * ens.se


class _Draw:
    def __call__(self, rng):
        return rng.normal()


def test_worker_count_does_not_change_results():
    a = map_replicates(_Draw(), 37, base_seed=3, workers=1)
    b = map_replicates(_Draw(), 37, base_seed=3, workers=3)
    assert a == b


def test_replicate_error_carries_index():
    def fail_on_third(rng, calls=[]):
        calls.append(1)
        if len(calls) == 3:
            raise RuntimeError("boom")
        return 0.0

    with pytest.raises(ReplicateError) as info:
        map_replicates(fail_on_third, 5, base_seed=0, workers=1)
    assert info.value.index == 2


def test_replicate_streams_are_distinct():
    a = replicate_rng(1, 0).random(4)
    b = replicate_rng(1, 1).random(4)
    c = replicate_rng(2, 0).random(4)
    assert not np.array_equal(a, b) and not np.array_equal(a, c)
    np.testing.assert_array_equal(a, replicate_rng(1, 0).random(4))


def test_trajectory_split_and_csv(sis):
    tr = simulate(sis, 100, [0.3], 2.0, seed=4)
    first, second = tr.split(1.0)
    assert first.n_events + second.n_events == tr.n_events
    np.testing.assert_array_equal(second.z_init, tr.state_at(1.0))
    buf = io.StringIO()
    tr.to_csv(buf, ["i"])
    lines = buf.getvalue().splitlines()
    assert lines[0] == "t,transition,i" and lines[1] == "0.0,-1,0.3"
    assert len(lines) == tr.n_events + 2


def test_ensemble_json_has_rng_and_seed():
    d = Ensemble.from_values([1.0, 2.0], 9).to_dict()
    assert d["base_seed"] == 9 and "Philox" in d["rng"] and d["values"] == [1.0, 2.0]
