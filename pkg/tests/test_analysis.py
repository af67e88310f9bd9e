import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from ballsim.analysis import (
    GapHistogram,
    counterexample_check,
    counterexample_state,
    delta_boundedness_experiment,
    expected_balls_one_step,
    expected_phi_ratio_one_step,
    gap_distribution_experiment,
    gap_key,
    geometric_checkpoints,
    heavy_gap_growth,
    lower_bound_experiment,
    lower_bound_threshold,
    map_reps,
    sample_efficiency_series,
    throughput_series,
    worker_count,
)
from ballsim.conditions import two_choice_vector
from ballsim.core import LoadState, ProbabilityVector, deficit, sorted_ranks
from ballsim.fast import simulate
from ballsim.potentials import compute_log_phi, good_event
from ballsim.processes import Kind, ProcessConfig, run

import oracles


def S(loads):
    return LoadState.from_loads(loads)


def test_expected_balls_examples():
    u4 = ProbabilityVector.uniform(4)
    # loads [2,0,0,0]: three bins with deficit 1
    assert expected_balls_one_step(S([2, 0, 0, 0]), u4) == Fraction(7, 4)
    assert expected_balls_one_step(S([9, 0, 0]), ProbabilityVector.uniform(3)) == 3
    assert expected_balls_one_step(S([5, 5, 5, 5]), u4) == 1
    with pytest.raises(ValueError):
        expected_balls_one_step(S([1, 0]), u4)


@st.composite
def state_and_vector(draw, max_n=20):
    loads = draw(st.lists(st.integers(0, 25), min_size=1, max_size=max_n))
    weights = draw(st.lists(st.integers(0, 50), min_size=len(loads), max_size=len(loads)))
    if sum(weights) == 0:
        weights = [1] * len(loads)
    probs = [Fraction(w, sum(weights)) for w in weights]
    return loads, probs


@settings(max_examples=200)
@given(state_and_vector())
def test_expected_balls_matches_bruteforce(sv):
    loads, probs = sv
    got = expected_balls_one_step(S(loads), ProbabilityVector.from_fractions(probs))
    want = oracles.expected_balls(loads, probs)
    assert got == want
    assert abs(float(got) - float(want)) <= 1e-9 * float(want)


@given(st.lists(st.integers(0, 25), min_size=1, max_size=8), st.lists(st.integers(1, 40), min_size=8, max_size=8))
def test_condition_p_vectors_need_at_least_uniform_balls(loads, raw):
    n = len(loads)
    # ascending-by-rank weights put no more than k/n mass on the k heaviest ranks
    w = sorted(raw[:n])
    probs = [Fraction(x, sum(w)) for x in w]
    assert oracles.majorized_by_uniform(probs)
    s = S(loads)
    assert expected_balls_one_step(s, ProbabilityVector.from_fractions(probs)) >= expected_balls_one_step(
        s, ProbabilityVector.uniform(n)
    )


MC_STATES = [
    [2, 0, 0, 0],
    [9, 0, 0],
    [5, 4, 3, 2, 1, 0],
    [1] * 7 + [0] * 3,
    [10, 10, 0, 0, 0],
    [3, 3, 3, 3],
    [7, 1, 1, 1, 0, 0, 0, 0],
    list(range(12)),
    [0, 0, 0, 0, 0, 4],
    [6, 2, 2, 2, 1, 1, 0],
]


@pytest.mark.parametrize("loads", MC_STATES)
def test_expected_balls_monte_carlo(loads):
    s = S(loads)
    n = s.n
    vec = two_choice_vector(n) if n % 2 else ProbabilityVector.uniform(n)
    balls = np.array([deficit(s, i) + 1 if s.is_underloaded(i) else 1 for i in sorted_ranks(s)], dtype=float)
    exact = float(expected_balls_one_step(s, vec))
    var = float(np.dot(vec.probs, balls**2)) - exact**2
    N = 10**6
    ranks = np.random.default_rng(len(loads) * 1009 + sum(loads)).choice(n, size=N, p=vec.probs)
    mean = balls[ranks].mean()
    assert abs(mean - exact) <= 3 * math.sqrt(var / N) + 1e-12


STEP_ORACLES = {
    Kind.PACKING: oracles.packing_step,
    Kind.TIGHT_PACKING: oracles.tight_packing_step,
    Kind.ONE_CHOICE: lambda loads, i: [x + (j == i) for j, x in enumerate(loads)],
}


@settings(max_examples=200)
@given(
    st.lists(st.integers(0, 20), min_size=2, max_size=20),
    st.floats(0.005, 0.1),
    st.sampled_from(sorted(STEP_ORACLES, key=lambda k: k.value)),
    st.sampled_from([0, 1, 2]),
)
def test_phi_ratio_matches_bruteforce(loads, alpha, kind, threshold):
    assume(oracles.phi(loads, alpha, threshold) > 0)
    lr = expected_phi_ratio_one_step(S(loads), alpha, kind, threshold)
    want = oracles.expected_phi_ratio(loads, alpha, STEP_ORACLES[kind], threshold)
    assert math.exp(lr) == pytest.approx(want, rel=1e-9)


def test_phi_ratio_degenerate_and_errors():
    assert expected_phi_ratio_one_step(S([5]), 0.5, threshold=0) == 0.0
    with pytest.raises(ValueError):
        expected_phi_ratio_one_step(S([1, 1]), 0.5)  # no bin two above average
    with pytest.raises(ValueError):
        expected_phi_ratio_one_step(S([9, 0]), 0.0)
    with pytest.raises(ValueError):
        expected_phi_ratio_one_step(S([9, 0]), 0.5, Kind.MEMORY)


def packing_states(n, m, every, seed):
    states = []
    cfg = ProcessConfig(Kind.PACKING, seed=seed)
    simulate(cfg, n, m, checkpoints=range(every, m + 1, every), on_checkpoint=lambda l, W, t, S_: states.append(l.copy()))
    return [LoadState.from_loads(x) for x in states]


@pytest.mark.parametrize("alpha", [0.005, 0.009])
def test_packing_drift_with_additive_term(alpha):
    # E[Phi'] <= Phi + e^{3 alpha} on good-event Packing states, for small alpha
    states = [s for s in packing_states(100, 200_000, 100, seed=11) if good_event(s)]
    assert len(states) >= 1000
    checked = 0
    for s in states:
        lp = compute_log_phi(s, alpha)
        if lp == -math.inf:
            continue
        lr = expected_phi_ratio_one_step(s, alpha)
        assert math.exp(lp + lr) <= math.exp(lp) + math.exp(3 * alpha)
        checked += 1
    assert checked >= 1000


@pytest.mark.xfail(strict=True, reason="the plain mean of E[Phi']/Phi sits slightly above 1 on these states; "
                   "the drift only appears with the additive constant term (test above)")
def test_packing_drift_plain_average_ratio():
    states = [s for s in packing_states(100, 200_000, 100, seed=11) if good_event(s)]
    ratios = [math.exp(expected_phi_ratio_one_step(s, 0.5)) for s in states if compute_log_phi(s, 0.5) > -math.inf]
    assert len(ratios) >= 1000
    assert np.mean(ratios) <= 1


def test_counterexample_state_shape():
    s = counterexample_state(16)
    assert s.loads.tolist() == [5] + [1] * 11 + [0] * 4
    assert s.W == 16
    for bad in (15, 1, 2):
        with pytest.raises(ValueError):
            counterexample_state(bad)


@pytest.mark.parametrize("alpha", [0.25, 0.5, 1.0])
@pytest.mark.parametrize("threshold", [0, 2])
def test_counterexample_against_oracle(alpha, threshold):
    loads = counterexample_state(100).loads.tolist()
    want = oracles.expected_phi_ratio(loads, alpha, oracles.packing_step, threshold)
    res = counterexample_check(100, alpha, threshold)
    assert res.ratio == pytest.approx(want, rel=1e-12)


@pytest.mark.parametrize("alpha", [0.25, 0.5, 1.0])
@pytest.mark.parametrize("threshold", [0, 2])
def test_counterexample_large(alpha, threshold):
    res = counterexample_check(10_000, alpha, threshold)
    assert res.passed and res.ratio >= res.bound


def test_throughput_and_efficiency_series():
    _, one = run(ProcessConfig(Kind.ONE_CHOICE, seed=1), 10, 200, stride=1)
    assert all(v == 1 for _, v in throughput_series(one)) and all(v == 1 for _, v in sample_efficiency_series(one))
    _, two = run(ProcessConfig(Kind.D_CHOICE, d=2, seed=1), 10, 200, stride=1)
    assert all(v == Fraction(1, 2) for _, v in sample_efficiency_series(two))
    _, pk = run(ProcessConfig(Kind.PACKING, seed=1), 10, 200, stride=1)
    mu = throughput_series(pk)
    assert mu[0] == (1, 1)
    assert all(v >= 1 for _, v in mu) and all(v >= 1 for _, v in sample_efficiency_series(pk))
    fr = simulate(ProcessConfig(Kind.PACKING, seed=1), 10, 200, checkpoints=[1, 50, 200])
    assert throughput_series(fr) == [x for x in mu if x[0] in (1, 50, 200)]
    with pytest.raises(ValueError):
        throughput_series([(0, 0, 0)])
    with pytest.raises(ValueError):
        sample_efficiency_series([(1, 1, 0)])


def test_gap_histogram():
    assert gap_key(Fraction(0)) == 0 and gap_key(Fraction(1, 3)) == 1 and gap_key(Fraction(2)) == 2
    h = GapHistogram.from_gaps([Fraction(1, 2), Fraction(1), Fraction(3, 2), Fraction(2), Fraction(5, 2)])
    assert dict(h.counts) == {1: 2, 2: 2, 3: 1}
    assert h.mode == 1 and h.total == 5
    assert sum(share for _, _, share in h.rows()) == pytest.approx(1.0)


def test_worker_count_env(monkeypatch):
    monkeypatch.delenv("BALLSIM_THREADS", raising=False)
    assert worker_count() == 1
    monkeypatch.setenv("BALLSIM_THREADS", "3")
    assert worker_count() == 3 and worker_count(2) == 2
    monkeypatch.setenv("BALLSIM_THREADS", "x")
    with pytest.raises(ValueError):
        worker_count()
    assert map_reps(lambda r: r * r, 5, 4) == [0, 1, 4, 9, 16]


def test_experiment_independent_of_threads():
    cfg = ProcessConfig(Kind.PACKING, seed=4)
    a = gap_distribution_experiment(cfg, 50, 5000, 8, workers=1, stride=1000, alpha=0.5)
    b = gap_distribution_experiment(cfg, 50, 5000, 8, workers=4, stride=1000, alpha=0.5)
    assert a.gaps == b.gaps and a.series == b.series
    assert a.seeds == [(4, r) for r in range(8)]
    s = a.summary
    assert s["min"] <= s["median"] <= s["max"] and s["mode"] == a.histogram.mode
    assert len(a.series["mu"]) == 5


def test_lower_bound_pieces():
    assert lower_bound_threshold(10**5) == pytest.approx(0.5 * math.log(1e5) / math.log(math.log(1e5)))
    res = lower_bound_experiment(ProcessConfig(Kind.PACKING, seed=1), 100, 50, 5, 0.0)
    assert res.fraction == 1.0
    res = lower_bound_experiment(ProcessConfig(Kind.PACKING, seed=1), 100, 50, 5, 1000.0)
    assert res.fraction == 0.0


def test_geometric_checkpoints():
    assert geometric_checkpoints(10**5, 10**6) == [100000, 200000, 400000, 800000, 1000000]
    assert geometric_checkpoints(3, 3) == [3]
    with pytest.raises(ValueError):
        geometric_checkpoints(5, 4)


def test_heavy_growth_and_boundedness_smoke():
    fit = heavy_gap_growth(ProcessConfig(Kind.ONE_CHOICE, seed=2), [100, 1000], reps=5, kappa=2)
    assert fit.slope > 0 and len(fit.medians) == 2
    b = delta_boundedness_experiment(ProcessConfig(Kind.PACKING, seed=2), 50, [1000, 2000, 4000], reps=3)
    assert b.checkpoints == (1000, 2000, 4000)
    assert all(v > 0 for v in b.mean_delta_over_n) and b.spread(b.mean_delta_over_n) >= 0
