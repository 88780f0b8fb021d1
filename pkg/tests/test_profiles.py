import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from arbmine.matcher import ArbitrageAction
from arbmine.profiles import (
    DegenerateCovariance,
    build_profiles,
    classify_aggressive,
    detect_metaorders,
    learning_filter,
    pca_first_component,
    pca_scores,
)
from arbmine.synth import rng_for
from helpers import BASE_TS, leg

DAY = 86_400


def action(user, ts, buy="EUR", sell="USD", btc="1", aggressive=(None, None), tag=""):
    tid = f"{user}-{ts}-{buy}-{sell}{tag}"
    return ArbitrageAction(
        leg(tid + "b", user, "buy", buy, btc=btc, ts=ts, aggressive=aggressive[0]),
        leg(tid + "s", user, "sell", sell, btc=btc, ts=ts, aggressive=aggressive[1]),
        0,
        0.0,
    )


def run(user, start, gaps, **kw):
    times = [start]
    for g in gaps:
        times.append(times[-1] + g)
    return [action(user, t, **kw) for t in times]


def test_five_actions_twenty_seconds_apart_form_one_metaorder():
    (m,) = detect_metaorders(run(1, BASE_TS, [20] * 4))
    assert m.length == 5 and m.mean_delay == 20 and m.total_btc == 5


def test_four_actions_are_not_a_metaorder():
    assert detect_metaorders(run(1, BASE_TS, [20] * 3)) == []


def test_gap_of_sixty_joins_and_sixty_one_splits():
    assert [m.length for m in detect_metaorders(run(1, BASE_TS, [60] * 5))] == [6]
    split = run(1, BASE_TS, [10] * 4 + [61] + [10] * 4)
    assert [m.length for m in detect_metaorders(split)] == [5, 5]


def test_reversed_direction_is_a_separate_run():
    forward = run(1, BASE_TS, [10] * 2)
    backward = run(1, BASE_TS + 5, [10] * 2, buy="USD", sell="EUR")
    assert detect_metaorders(forward + backward) == []


def test_metaorder_usd_totals():
    acts = run(1, BASE_TS, [5] * 4)
    (m,) = detect_metaorders(acts, usd={id(a): 100.0 for a in acts})
    assert m.total_usd == 500.0
    (m,) = detect_metaorders(acts, usd={id(acts[0]): 1.0})
    assert m.total_usd is None


@settings(max_examples=80, deadline=None)
@given(
    st.lists(
        st.tuples(st.integers(1, 3), st.integers(0, 900), st.sampled_from([("EUR", "USD"), ("USD", "EUR"), ("GBP", "USD")])),
        max_size=60,
        unique_by=lambda x: (x[0], x[1], x[2]),
    )
)
def test_metaorders_are_maximal_disjoint_runs(specs):
    acts = [action(u, BASE_TS + t, *pair) for u, t, pair in specs]
    metas = detect_metaorders(acts)
    seen = set()
    for m in metas:
        assert m.length >= 5
        times = [a.ts for a in m.actions]
        assert all(0 <= b - a <= 60 for a, b in zip(times, times[1:]))
        group = sorted(a.ts for a in acts if (a.user_id, a.direction) == (m.user_id, m.direction))
        before = [t for t in group if t < times[0]]
        after = [t for t in group if t > times[-1]]
        assert not before or times[0] - before[-1] > 60
        assert not after or after[0] - times[-1] > 60
        for a in m.actions:
            assert id(a) not in seen
            seen.add(id(a))


def test_aggressive_classification():
    acts = [
        action(1, BASE_TS, aggressive=(False, False)),
        action(1, BASE_TS + 1, aggressive=(False, True)),
        action(1, BASE_TS + 2, aggressive=(None, False)),
    ]
    flags, unannotated = classify_aggressive(acts)
    assert flags == [False, True, False] and unannotated == 1


def test_profile_fields():
    acts = [
        action(1, BASE_TS),
        action(2, BASE_TS),
        action(2, BASE_TS + 3 * DAY, buy="GBP", aggressive=(True, False)),
        *run(3, BASE_TS, [1] * 4),
    ]
    profiles = build_profiles(acts)
    p1, p2, p3 = profiles[1], profiles[2], profiles[3]
    assert (p1.n_markets, p1.n_fiat_currencies, p1.d_currencies, p1.log_actions) == (1, 2, 0, 0.0)
    assert p1.days_to_new_market is None and p1.d_metaorder == 0 and p1.d_aggressive == 0
    assert (p2.n_markets, p2.n_fiat_currencies, p2.d_currencies, p2.days_to_new_market) == (2, 3, 1, 3)
    assert p2.log_currencies == pytest.approx(math.log(2)) and p2.d_aggressive == 1
    assert p3.n_actions == 5 and p3.log_actions == pytest.approx(math.log(5)) and p3.d_metaorder == 1
    assert sum(p.n_actions for p in profiles.values()) == len(acts)


def test_learning_filter_keeps_fast_switchers():
    acts = [
        action(1, BASE_TS), action(1, BASE_TS + 3 * DAY, buy="GBP"),
        action(2, BASE_TS), action(2, BASE_TS + 20 * DAY, buy="GBP"),
        action(3, BASE_TS),
    ]
    kept = learning_filter(build_profiles(acts), acts, max_days=14)
    assert sorted({a.user_id for a in kept}) == [1, 3]
    assert len(kept) == 3


def test_rank_one_pca_explains_everything():
    x = rng_for(1).normal(size=50)
    loadings, explained, scores, _ = pca_first_component(np.column_stack([x, 3 * x + 2]))
    assert explained == pytest.approx(1.0, abs=1e-10)
    assert np.linalg.norm(loadings) == pytest.approx(1.0, abs=1e-12)
    assert loadings[1] > 0


def test_pca_rejects_constant_column():
    with pytest.raises(DegenerateCovariance):
        pca_first_component(np.column_stack([np.arange(5.0), np.ones(5)]))


@pytest.mark.parametrize("seed", range(10))
def test_pca_properties_on_random_data(seed):
    rng = rng_for(seed)
    data = rng.normal(size=(40, 4)) @ rng.normal(size=(4, 4))
    loadings, explained, scores, values = pca_first_component(data)
    assert abs(scores.mean()) < 1e-10
    assert np.linalg.norm(loadings) == pytest.approx(1.0, abs=1e-12)
    assert 0 < explained <= 1
    assert loadings[1] > 0
    scaled = data * np.array([2.0, 0.5, 7.0, 1.0])
    _, _, rescaled_scores, _ = pca_first_component(scaled)
    np.testing.assert_allclose(rescaled_scores, scores, atol=1e-10)
    # the leading eigenvalue agrees with an independent SVD of the standardized data
    z = (data - data.mean(axis=0)) / data.std(axis=0)
    sv = np.linalg.svd(z / np.sqrt(len(z)), compute_uv=False)
    assert values[0] == pytest.approx(sv[0] ** 2, rel=1e-10)


def test_pca_scores_attach_to_profiles():
    acts = []
    for user in range(1, 9):
        n = user
        if user % 2:
            acts += [action(user, BASE_TS + 100 * k) for k in range(n)]
        else:
            acts += [action(user, BASE_TS + 100 * k, buy="GBP" if k else "EUR", aggressive=(user % 4 == 0, False)) for k in range(n)]
    acts += run(9, BASE_TS, [1] * 5)
    result, updated = pca_scores(build_profiles(acts))
    assert set(updated) == set(result.scores)
    assert all(updated[u].pc1_score == result.scores[u] for u in updated)
    assert abs(sum(result.scores.values())) < 1e-10
