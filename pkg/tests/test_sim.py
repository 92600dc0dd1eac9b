from collections import deque

import numpy as np
import pytest

from dtnlab.errors import ConfigError, EmptyNetwork, HorizonExceeded, InvalidInput
from dtnlab.mobility import MobilityConfig
from dtnlab.sim import (DelayedSpread, EnsembleStats, RunTrace, SimConfig, aggregate,
                        estimate_pairwise_meeting_rate, node_count, onset_events, ps,
                        read_deliveries, read_traces, run_ensemble, run_once, write_deliveries,
                        write_traces)


def test_node_count_rounding():
    assert node_count(550, 5000) == 13750
    assert node_count(600, 5000) == 15000
    assert node_count(0.5, 1000) == 1  # half rounds up
    assert node_count(0.011e6, 1000) == 11000


def test_default_step():
    assert SimConfig(density=550).step == 1.0
    cfg = SimConfig(density=0.001e6, L=1000, R=10, mobility=MobilityConfig(v_min=1, v_max=3))
    assert cfg.step == pytest.approx(0.05 * 10 / 3)


def test_config_validation():
    with pytest.raises(ConfigError):
        SimConfig()
    with pytest.raises(ConfigError):
        SimConfig(density=500, transfer_delay=-1)
    with pytest.raises(ConfigError):
        SimConfig(density=500, stop_fraction=0)


def test_config_text_roundtrip(tmp_path):
    cfg = SimConfig(density=550, L=2000, horizon=30, transfer_delay=0.1, seed=4, dt=0.5)
    (tmp_path / "c.txt").write_text(cfg.to_text())
    assert SimConfig.from_file(tmp_path / "c.txt") == cfg
    with pytest.raises(ConfigError):
        SimConfig.from_text("density = 5\nbogus = 1\n")


def test_empty_network():
    with pytest.raises(EmptyNetwork):
        run_once(SimConfig(nodes=1, L=10), np.random.default_rng(0))


def test_same_initial_cluster_delivers_at_zero():
    tr = run_once(SimConfig(nodes=2, L=10, R=50, horizon=5), np.random.default_rng(0))
    assert tr.delivery_time == 0.0
    assert tr.n_at.tolist() == [2]


def test_positive_delay_never_delivers_at_zero():
    for seed in range(5):
        tr = run_once(SimConfig(nodes=2, L=10, R=50, horizon=5, transfer_delay=0.1),
                      np.random.default_rng(seed))
        assert tr.n_at[0] == 1
        assert tr.delivery_time == pytest.approx(0.1)


def test_isolated_pair_never_delivers():
    cfg = SimConfig(nodes=2, L=5000, R=1, horizon=20, mobility=MobilityConfig(v_max=1e-9))
    tr = run_once(cfg, np.random.default_rng(2))
    assert tr.delivery_time is None
    assert np.all(tr.n_at == 1) and len(tr.n_at) == 21


def _oracle_counts(frames, R, source):
    infected = np.zeros(len(frames[0]), bool)
    infected[source] = True
    out = []
    for pos in frames:
        d2 = ((pos[:, None] - pos[None]) ** 2).sum(-1)
        adj = d2 <= R * R
        q = deque(np.flatnonzero(infected))
        while q:
            u = q.popleft()
            for v in np.flatnonzero(adj[u] & ~infected):
                infected[v] = True
                q.append(v)
        out.append(int(infected.sum()))
    return out


@pytest.mark.parametrize("seed", range(4))
def test_zero_delay_closure_matches_oracle(seed):
    cfg = SimConfig(nodes=150, L=400, R=25, horizon=60, mobility=MobilityConfig(v_max=3.0))
    frames = []
    tr = run_once(cfg, np.random.default_rng(seed), full=True,
                  observer=lambda k, t, f: frames.append(f.positions.copy()))
    assert tr.n_at.tolist() == _oracle_counts(frames, cfg.R, tr.source)


def test_frozen_nodes_keep_source_cluster():
    cfg = SimConfig(nodes=300, L=500, R=30, horizon=20, mobility=MobilityConfig(v_max=1e-12))
    for seed in range(6):
        tr = run_once(cfg, np.random.default_rng(seed), full=True)
        assert np.all(tr.n_at == tr.cluster0)
        assert (tr.delivery_time is not None) == (tr.delivery_time == 0.0)


def test_trace_invariants():
    cfg = SimConfig(density=400, L=1000, horizon=40)
    _, traces = run_ensemble(cfg, 10, full=True)
    for tr in traces:
        assert np.all(np.diff(tr.n_at) >= 0)
        assert 1 <= tr.n_at.min() and tr.n_at.max() <= tr.M
        if tr.delivery_time is not None:
            k = int(round(tr.delivery_time / tr.dt))
            assert tr.n_at[k] >= 1


def test_contact_recording_does_not_change_traces():
    cfg = SimConfig(density=550, L=1000, horizon=30)
    a = run_once(cfg, np.random.default_rng(4), full=True)
    b = run_once(cfg, np.random.default_rng(4), full=True, record_contacts=True)
    assert np.array_equal(a.n_at, b.n_at) and a.cluster0 == b.cluster0


def test_same_seed_same_trace():
    cfg = SimConfig(density=550, L=1000, horizon=30, transfer_delay=0.1)
    a = run_once(cfg, np.random.default_rng(8), full=True)
    b = run_once(cfg, np.random.default_rng(8), full=True)
    assert np.array_equal(a.n_at, b.n_at) and a.delivery_time == b.delivery_time


def test_ensemble_reproducible_and_prefix_stable():
    cfg = SimConfig(density=500, L=1000, horizon=20)
    s1, t1 = run_ensemble(cfg, 6, base_seed=3, full=True)
    s2, t2 = run_ensemble(cfg, 6, base_seed=3, full=True)
    assert np.array_equal(s1.mean_n_at, s2.mean_n_at)
    assert np.array_equal(s1.delivery_times, s2.delivery_times, equal_nan=True)
    _, t3 = run_ensemble(cfg, 3, base_seed=3, full=True)
    assert all(np.array_equal(a.n_at, b.n_at) for a, b in zip(t1, t3))


def test_parallel_matches_serial():
    cfg = SimConfig(density=500, L=800, horizon=10)
    s1, _ = run_ensemble(cfg, 4, base_seed=1, full=True)
    s2, _ = run_ensemble(cfg, 4, base_seed=1, full=True, workers=2)
    assert np.array_equal(s1.mean_n_at, s2.mean_n_at)


def test_single_run_statistics():
    cfg = SimConfig(density=500, L=1000, horizon=20)
    stats, (tr,) = run_ensemble(cfg, 1, full=True)
    assert np.array_equal(stats.mean_n_at, tr.n_at)
    assert stats.n0_mean == tr.n_at[0]


def test_padding_carries_last_value():
    a = RunTrace(np.array([1, 2, 5]), 1.0, 10, 0, 1, 2.0)
    b = RunTrace(np.array([1, 1, 1, 3, 4]), 1.0, 10, 0, 1, None)
    stats = aggregate([a, b], horizon=4)
    assert stats.mean_n_at.tolist() == [1, 1.5, 3, 4, 4.5]


def _stats(delivery, horizon=10.0):
    d = np.array([np.nan if v is None else v for v in delivery], float)
    return EnsembleStats(len(d), 1.0, 10, horizon, 1.0, d)


def test_ps_basic():
    assert ps(_stats([None, None]), 5) == 0
    assert ps(_stats([0.0, 0.0]), 0) == 1
    s = _stats([0.0, 3.0, None, 7.0])
    assert [ps(s, T) for T in (0, 3, 6, 10)] == [0.25, 0.5, 0.5, 0.75]
    with pytest.raises(HorizonExceeded):
        ps(s, 11)


def test_ps_nondecreasing_in_deadline():
    stats, _ = run_ensemble(SimConfig(density=500, L=1000, horizon=30), 20)
    p = [ps(stats, T) for T in range(31)]
    assert all(b >= a for a, b in zip(p, p[1:]))


def test_delayed_spread_multi_hop_within_step():
    s = DelayedSpread(3, 0, 0.3, 1.0)
    s.observe(0, [0, 1], [1, 2])
    assert s.inf_time.tolist() == pytest.approx([0.0, 0.3, 0.6])
    assert s.infected_by(0.0) == 1 and s.infected_by(1.0) == 3


def test_delayed_spread_broken_link_aborts():
    s = DelayedSpread(2, 0, 1.5, 1.0)
    s.observe(0, [0], [1])
    s.observe(1, [], [])
    s.observe(2, [0], [1])  # restarts from the new onset at t=2
    assert s.inf_time[1] == np.inf
    s.observe(3, [0], [1])
    assert s.inf_time[1] == pytest.approx(3.5)


def test_delayed_spread_waits_for_sender():
    # Link 1-2 is up from t=0 but 1 only gets the message at 1.5.
    s = DelayedSpread(3, 0, 1.5, 1.0)
    s.observe(0, [0, 1], [1, 2])
    s.observe(1, [0, 1], [1, 2])
    assert s.inf_time[1] == pytest.approx(1.5) and s.inf_time[2] == np.inf
    s.observe(2, [0, 1], [1, 2])
    assert s.inf_time[2] == pytest.approx(3.0)


def test_pmr_examples():
    assert estimate_pairwise_meeting_rate(0, 10, 50.0) == 0
    assert estimate_pairwise_meeting_rate(1, 2, 100.0) == pytest.approx(0.01)
    static = [(t, [(0, 1)]) for t in range(5)]
    events = list(onset_events(static))
    assert events == [(0, 0, 1)]
    assert estimate_pairwise_meeting_rate(events, 3, 4.0) == pytest.approx(1 / (3 * 4.0))
    assert list(onset_events(static, include_initial=False)) == []
    with pytest.raises(InvalidInput):
        estimate_pairwise_meeting_rate(1, 2, 0.0)


def test_onset_counting_in_runs():
    cfg = SimConfig(nodes=2, L=10, R=50, horizon=5)
    stats, _ = run_ensemble(cfg, 2, full=True, record_contacts=True)
    assert stats.onsets == 0  # always linked, present from t=0


def test_csv_roundtrip(tmp_path):
    cfg = SimConfig(density=500, L=1000, horizon=25)
    stats, traces = run_ensemble(cfg, 5, full=True)
    write_traces(traces, tmp_path / "t.csv")
    write_deliveries(traces, tmp_path / "d.csv")
    back = read_traces(tmp_path / "t.csv", cfg.step, cfg.M)
    assert all(np.array_equal(a.n_at, b.n_at) for a, b in zip(traces, back))
    assert np.array_equal(read_deliveries(tmp_path / "d.csv"), stats.delivery_times, equal_nan=True)
    assert (tmp_path / "t.csv").read_text().startswith("run_id,t,N\n")
