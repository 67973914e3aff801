import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gruwe.data import (
    EventSequence,
    IrregularSeries,
    Standardization,
    check_event_types,
    gen_decay_process,
    gen_hawkes_events,
    gen_poisson_events,
    hawkes_ll,
    load_events_jsonl,
    load_series_jsonl,
    mean_interarrival,
    poisson_ll,
    poisson_mle_rates,
    split,
    write_events_jsonl,
    write_series_jsonl,
)
from gruwe.errors import ConfigError, DataError
from gruwe.numerics import make_rng


def write_lines(path, lines):
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


def test_series_schema_example(tmp_path):
    f = write_lines(tmp_path / "s.jsonl", ['{"times":[0.0,1.5],"values":[[1.0,0.0],[0.0,2.0]],"mask":[[1,0],[0,1]]}'])
    (s,) = load_series_jsonl(f)
    assert len(s) == 2 and s.dim == 2
    np.testing.assert_array_equal(s.values, [[1, 0], [0, 2]])


def test_series_mask_optional_and_null_for_missing(tmp_path):
    f = write_lines(tmp_path / "s.jsonl", [
        '{"times":[0.0,1.0],"values":[[1.0,2.0],[3.0,4.0]]}',
        '{"times":[0.5],"values":[[null,7.0]],"mask":[[0,1]]}',
    ])
    a, b = load_series_jsonl(f)
    np.testing.assert_array_equal(a.mask, 1.0)
    np.testing.assert_array_equal(b.values, [[0.0, 7.0]])


def test_empty_file(tmp_path):
    assert load_series_jsonl(write_lines(tmp_path / "e.jsonl", [])) == []
    assert load_events_jsonl(write_lines(tmp_path / "h.jsonl", ['{"format":"gruwe-events","version":1}'])) == []


def test_repeated_time_names_line(tmp_path):
    f = write_lines(tmp_path / "s.jsonl", ['{"times":[0.0],"values":[[1.0]]}', '{"times":[1.0,1.0],"values":[[1.0],[2.0]]}'])
    with pytest.raises(DataError, match=r"s\.jsonl:2:"):
        load_series_jsonl(f)


@pytest.mark.parametrize("line", [
    '{"times":[0.0,1.0],"values":[[1.0,2.0],[3.0]]}',
    '{"times":[0.0],"values":[[1.0]],"mask":[[2]]}',
    '{"times":[0.0],"values":[[NaN]]}',
    '{"times":[0.0],"values":[[1.0]],"extra":1}',
    '{"times":[0.0],"values":[["a"]]}',
    '{"times":[1.0,0.0],"values":[[1.0],[2.0]]}',
    '{"values":[[1.0]]}',
    '[1, 2]',
    '{"times":[0.0],',
])
def test_series_rejections(tmp_path, line):
    with pytest.raises(DataError, match=":1:"):
        load_series_jsonl(write_lines(tmp_path / "bad.jsonl", [line]))


def test_series_dimension_must_agree(tmp_path):
    f = write_lines(tmp_path / "s.jsonl", ['{"times":[0.0],"values":[[1.0]]}', '{"times":[0.0],"values":[[1.0,2.0]]}'])
    with pytest.raises(DataError, match=":2:"):
        load_series_jsonl(f)


def test_events_schema_example(tmp_path):
    (s,) = load_events_jsonl(write_lines(tmp_path / "e.jsonl", ['{"times":[0.5,1.5],"types":[0,0],"t_max":2.0}']))
    np.testing.assert_array_equal(s.times, [0.5, 1.5])
    assert s.t_max == 2.0 and s.types.tolist() == [0, 0]


@pytest.mark.parametrize("line", [
    '{"times":[0.5,2.5],"types":[0,0],"t_max":2.0}',
    '{"times":[0.5],"types":[-1],"t_max":2.0}',
    '{"times":[0.5],"types":[0.5],"t_max":2.0}',
    '{"times":[0.5],"types":[0,1],"t_max":2.0}',
    '{"times":[0.5],"types":[0],"t_max":-1}',
    '{"times":[0.5],"types":[0]}',
])
def test_events_rejections(tmp_path, line):
    with pytest.raises(DataError):
        load_events_jsonl(write_lines(tmp_path / "bad.jsonl", [line]))


def test_event_type_checked_at_binding():
    seq = EventSequence(np.array([0.1, 0.2]), np.array([0, 5]), 1.0)
    check_event_types([seq], 6)
    with pytest.raises(DataError):
        check_event_types([seq], 3)


def test_header_mismatch(tmp_path):
    with pytest.raises(DataError, match="format"):
        load_series_jsonl(write_lines(tmp_path / "x.jsonl", ['{"format":"gruwe-events","version":1}']))
    with pytest.raises(DataError, match="version"):
        load_series_jsonl(write_lines(tmp_path / "x.jsonl", ['{"format":"gruwe-series","version":9}']))


def test_errors_collected_and_capped(tmp_path):
    f = write_lines(tmp_path / "x.jsonl", ["{bad"] * 15)
    with pytest.raises(DataError) as exc:
        load_series_jsonl(f)
    msg = str(exc.value)
    assert ":1:" in msg and ":10:" in msg and ":11:" not in msg and "+5 more" in msg


def test_invalid_utf8(tmp_path):
    f = tmp_path / "x.jsonl"
    f.write_bytes(b'{"times":[0.0],"values":[[1.0]]}\n\xff\xfe\n')
    with pytest.raises(DataError, match="UTF-8"):
        load_series_jsonl(f)


def test_missing_file(tmp_path):
    with pytest.raises(DataError):
        load_events_jsonl(tmp_path / "nope.jsonl")


def test_series_roundtrip(tmp_path):
    seqs, _ = gen_decay_process(make_rng(3), 20, dim=3)
    write_series_jsonl(tmp_path / "s.jsonl", seqs)
    back = load_series_jsonl(tmp_path / "s.jsonl")
    write_series_jsonl(tmp_path / "t.jsonl", back)
    assert (tmp_path / "s.jsonl").read_bytes() == (tmp_path / "t.jsonl").read_bytes()
    for a, b in zip(seqs, back):
        np.testing.assert_array_equal(a.times, b.times)
        np.testing.assert_array_equal(a.values, b.values)
        np.testing.assert_array_equal(a.mask, b.mask)


def test_events_roundtrip(tmp_path):
    seqs, _ = gen_hawkes_events(make_rng(4), 15, 0.5, 0.5, 1.0, 20.0, num_types=2)
    write_events_jsonl(tmp_path / "e.jsonl", seqs)
    back = load_events_jsonl(tmp_path / "e.jsonl")
    for a, b in zip(seqs, back):
        np.testing.assert_array_equal(a.times, b.times)
        np.testing.assert_array_equal(a.types, b.types)
        assert a.t_max == b.t_max


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=20), st.integers(0, 2**16))
def test_series_roundtrip_property(tmp_path_factory, vals, seed):
    rng = np.random.default_rng(seed)
    n = len(vals)
    times = np.cumsum(rng.uniform(0.01, 2.0, n))
    mask = (rng.random((n, 1)) > 0.3).astype(float)
    s = IrregularSeries(times, np.array(vals)[:, None], mask)
    path = tmp_path_factory.mktemp("rt") / "s.jsonl"
    write_series_jsonl(path, [s])
    (b,) = load_series_jsonl(path)
    np.testing.assert_array_equal(b.times, s.times)
    np.testing.assert_array_equal(b.values, s.values)
    np.testing.assert_array_equal(b.mask, s.mask)


# -- splits -------------------------------------------------------------------

def test_split_all_train():
    sp = split(10, (1, 0, 0), seed=3)
    assert sp.train == list(range(10)) and sp.validation == [] and sp.test == []


def test_split_deterministic_and_partition():
    a = split(103, (0.8, 0.1, 0.1), seed=5)
    b = split(103, (0.8, 0.1, 0.1), seed=5)
    assert a == b
    parts = a.train + a.validation + a.test
    assert sorted(parts) == list(range(103))
    assert (len(a.validation), len(a.test)) == (10, 10)
    assert split(103, (8, 1, 1), seed=5) == a  # ratios normalized


def test_split_select():
    coll = list("abcdef")
    sp = split(coll, (0.5, 0.5, 0), seed=1)
    assert sorted(sp.select(coll, "train") + sp.select(coll, "validation")) == coll


@pytest.mark.parametrize("ratios", [(0.5, 0.5), (-1, 1, 1), (0, 0, 0)])
def test_split_bad_ratios(ratios):
    with pytest.raises(ConfigError):
        split(10, ratios)


# -- standardization ----------------------------------------------------------

def test_standardization_unit_scale():
    seqs, _ = gen_decay_process(make_rng(1), 50, dim=3)
    stats = Standardization.fit(seqs)
    z = [stats.apply(s) for s in seqs]
    vals = np.concatenate([s.values for s in z])
    mask = np.concatenate([s.mask for s in z])
    for j in range(3):
        obs = vals[mask[:, j] > 0, j]
        assert abs(obs.mean()) < 1e-12
        assert abs(obs.var() - 1.0) < 1e-12
    np.testing.assert_allclose(stats.invert(z[0].values)[z[0].mask > 0], seqs[0].values[seqs[0].mask > 0])
    again = Standardization.from_dict(json.loads(json.dumps(stats.to_dict())))
    np.testing.assert_array_equal(again.mean, stats.mean)


# -- generators ---------------------------------------------------------------

def test_decay_process_no_missing():
    seqs, _ = gen_decay_process(make_rng(0), 10, dim=2, p_miss=0.0)
    assert all(np.all(s.mask == 1.0) for s in seqs)


def test_decay_process_deterministic():
    a, ta = gen_decay_process(make_rng(9), 5)
    b, tb = gen_decay_process(make_rng(9), 5)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.values, y.values)
    assert ta[0].to_dict() == tb[0].to_dict()


def test_decay_process_matches_truth():
    seqs, truths = gen_decay_process(make_rng(2), 5, dim=3)
    for s, f in zip(seqs, truths):
        np.testing.assert_allclose(s.values, f(s.times) * s.mask)
        assert np.all(np.diff(s.times) > 0)


def test_decay_process_interarrival_mean():
    # one long window: only the final (censored) draw is lost, whereas many
    # short windows bias in-window gaps toward small values
    (s,), _ = gen_decay_process(make_rng(11), 1, dim=1, rate=3.0, t_max=40_000.0)
    gaps = np.diff(s.times, prepend=0.0)
    assert gaps.size >= 100_000
    assert abs(gaps.mean() - 1 / 3.0) < 0.02 / 3.0


def test_decay_process_config_errors():
    with pytest.raises(ConfigError):
        gen_decay_process(make_rng(0), 3, kappa=(-0.1, 0.2))
    with pytest.raises(ConfigError):
        gen_decay_process(make_rng(0), 3, p_miss=1.0)


def test_poisson_rejects_zero_rate():
    with pytest.raises(ConfigError):
        gen_poisson_events(make_rng(0), 3, 0.0, 10.0)


def test_poisson_counts_concentrate():
    lam, T, n = 0.8, 50.0, 10_000
    seqs, _ = gen_poisson_events(make_rng(1), n, lam, T)
    mean = np.mean([len(s) for s in seqs])
    assert abs(mean - lam * T) <= 3 * math.sqrt(lam * T / n)


def test_poisson_oracle_ll():
    seq = EventSequence(np.array([0.5, 1.5]), np.array([0, 0]), 2.0)
    assert poisson_ll(seq, 1.0) == -2.0
    seqs, lls = gen_poisson_events(make_rng(2), 5, 1.3, 4.0)
    for s, ll in zip(seqs, lls):
        assert ll == pytest.approx(len(s) * math.log(1.3) - 1.3 * 4.0, rel=1e-14)


def test_hawkes_stability_required():
    with pytest.raises(ConfigError):
        gen_hawkes_events(make_rng(0), 1, 0.2, 1.0, 1.0, 10.0)


def test_hawkes_without_excitation_is_poisson():
    mu, T, n = 0.7, 30.0, 3000
    seqs, lls = gen_hawkes_events(make_rng(3), n, mu, 0.0, 1.0, T)
    counts = np.array([len(s) for s in seqs])
    assert abs(counts.mean() - mu * T) <= 3 * math.sqrt(mu * T / n)
    assert abs(counts.var() / counts.mean() - 1.0) < 0.1
    for s, ll in zip(seqs[:20], lls):
        assert ll == pytest.approx(poisson_ll(s, mu), rel=1e-12)


def test_hawkes_ll_beats_poisson_mle():
    seqs, lls = gen_hawkes_events(make_rng(4), 1000, 0.2, 0.8, 1.0, 50.0)
    pois = []
    for s in seqs:
        rate = max(len(s), 1e-300) / s.t_max
        pois.append(poisson_ll(s, rate) if len(s) else -rate * s.t_max)
    assert np.mean(lls) >= np.mean(pois)


def test_hawkes_ll_hand_value():
    seq = EventSequence(np.array([1.0, 2.0]), np.array([0, 0]), 3.0)
    mu, a, b = 0.5, 0.4, 1.0
    want = math.log(mu) + math.log(mu + a * math.exp(-1.0))
    want -= mu * 3.0 + a / b * ((1 - math.exp(-2.0)) + (1 - math.exp(-1.0)))
    assert hawkes_ll(seq, mu, a, b) == pytest.approx(want, rel=1e-14)


def test_hawkes_deterministic():
    a, _ = gen_hawkes_events(make_rng(5), 4, 0.3, 0.5, 1.0, 20.0, num_types=2)
    b, _ = gen_hawkes_events(make_rng(5), 4, 0.3, 0.5, 1.0, 20.0, num_types=2)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.times, y.times)
        np.testing.assert_array_equal(x.types, y.types)


def test_poisson_mle_and_interarrival():
    seqs = [EventSequence(np.array([1.0, 2.0, 4.0]), np.array([0, 1, 0]), 5.0),
            EventSequence(np.array([0.5]), np.array([1]), 5.0)]
    np.testing.assert_allclose(poisson_mle_rates(seqs, 2), [0.2, 0.2])
    assert mean_interarrival(seqs) == pytest.approx((1 + 1 + 2 + 0.5) / 4)
    with pytest.raises(DataError):
        mean_interarrival([EventSequence(np.zeros(0), np.zeros(0, dtype=int), 1.0)])
