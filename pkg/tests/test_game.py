import time

import numpy as np
import pytest

from smallnet.features import ElectrodeGrid
from smallnet.game import (AvatarState, CommandEvent, EEGFeed, ModelDecoder, NoisyOracleDecoder, OracleDecoder,
                           SpeedModel, Track, WrongDecoder, accuracies, calibrate_speed_model, generate_track,
                           read_race_log, run_race, step, write_race_log, write_race_summary)
from smallnet.network import Architecture, init
from smallnet.signal import default_signature_config


def _event(start_type, issue_type, pred):
    return CommandEvent(0.0, 0.0, 0, start_type, 0, issue_type, pred, True)


def test_track_count_and_determinism():
    t = generate_track(20, seed=3)
    assert len(t.pads) == 20 and t.length_m == 150.0
    assert generate_track(20, seed=3) == t
    with pytest.raises(ValueError):
        generate_track(0)


def test_pad_types_uniform():
    types = np.array(generate_track(100_000, seed=9).pad_types)
    freq = np.bincount(types, minlength=4) / len(types)
    assert np.all((freq >= 0.245) & (freq <= 0.255))


def test_speed_model_validated():
    with pytest.raises(ValueError):
        SpeedModel(v_correct=1.0, v_none=1.0)
    with pytest.raises(ValueError):
        SpeedModel(v_wrong=0.0)


def test_matching_commands_cross_pad_at_v_correct():
    track = Track(((2, 7.5), (1, 7.5)))
    speed = SpeedModel()
    state = AvatarState()
    for _ in range(9):
        state = step(state, 2, speed, 0.3, track)
    assert state.pad_index == 0 and state.position_m == pytest.approx(9 * 0.3 * 2.5)
    # the tenth matching command reaches the boundary at 7.5 / v_correct = 3.0 s,
    # then the command expires and the avatar coasts at v_none
    state = step(state, 2, speed, 0.4, track)
    assert state.pad_index == 1
    assert state.position_m == pytest.approx(7.5 + 0.1 * speed.v_none)


def test_position_strictly_increases():
    track = generate_track(5, seed=1)
    rng = np.random.default_rng(0)
    state = AvatarState()
    for _ in range(50):
        cmd = rng.choice([None, 0, 1, 2, 3])
        nxt = step(state, cmd, SpeedModel(), 0.3, track)
        if state.finished:
            break
        assert nxt.position_m > state.position_m
        state = nxt


def test_oracle_default_track():
    r = run_race(generate_track(), OracleDecoder())
    assert abs(r.completion_time_s - 60.0) <= 2.0
    assert (r.acc1, r.acc2) == (1.0, 1.0)


def test_calibrated_speed_hits_target():
    track = generate_track()
    speed = calibrate_speed_model(track, 60.0)
    assert run_race(track, OracleDecoder(), speed).completion_time_s == pytest.approx(60.0, abs=1e-6)


def test_boundary_latency_scenario():
    """Two 7.5 m pads, types 0 then 1, oracle with one cadence of latency.

    Hand enumeration: 0-0.3 s at v_none, then v_correct until the boundary
    at 3.18 s. The tick at 3.0 s sees pad 0 but its command lands at 3.3 s
    on pad 1, so it counts for acc1 and against acc2. Two stale commands
    leave the avatar at 7.815 m at 3.6 s, and the finish follows at
    3.6 + 7.185 / 2.5 = 6.474 s, after 22 ticks (0.0 ... 6.3 s). The last
    command would land at 6.6 s and is never applied.
    """
    r = run_race(Track(((0, 7.5), (1, 7.5))), OracleDecoder(latency_s=0.3))
    assert r.completion_time_s == pytest.approx(6.474, abs=1e-9)
    assert len(r.events) == 22
    assert r.acc1 == 1.0 and r.acc2 == pytest.approx(21 / 22)
    bad = [e for e in r.events if e.chunk_start_type != e.avatar_type_at_issue]
    assert len(bad) == 1
    assert bad[0].chunk_start_time_s == pytest.approx(3.0)
    assert (bad[0].chunk_start_type, bad[0].avatar_type_at_issue) == (0, 1)
    assert not r.events[-1].applied and all(e.applied for e in r.events[:-1])


def test_wrong_decoder_slower():
    track = generate_track()
    wrong = run_race(track, WrongDecoder())
    assert wrong.completion_time_s > run_race(track, OracleDecoder()).completion_time_s
    assert wrong.acc1 == 0.0


def test_accuracy_example():
    events = [_event(s, i, p) for s, i, p in zip("AABB", "ABBB", "AABB")]
    assert accuracies(events) == (1.0, 0.75)
    assert accuracies([_event(1, 1, 1)]) == (1.0, 1.0)
    with pytest.raises(ValueError):
        accuracies([])


def test_cadence_and_event_invariants():
    r = run_race(generate_track(seed=2), NoisyOracleDecoder(0.6, seed=1))
    starts = np.array([e.chunk_start_time_s for e in r.events])
    np.testing.assert_allclose(np.diff(starts), 0.3, atol=1e-12)
    assert all(e.issue_time_s >= e.chunk_start_time_s for e in r.events)
    assert 0 <= r.acc2 <= 1 and 0 <= r.acc1 <= 1


def test_zero_latency_attributions_coincide():
    r = run_race(generate_track(seed=5), NoisyOracleDecoder(0.5, seed=2))
    if all(e.chunk_start_type == e.avatar_type_at_issue for e in r.events):
        assert r.acc1 == r.acc2


def test_better_decoder_faster_sign_test():
    wins = 0
    for s in range(20):
        track = generate_track(seed=100 + s)
        good = run_race(track, NoisyOracleDecoder(0.8, seed=s)).completion_time_s
        poor = run_race(track, NoisyOracleDecoder(0.4, seed=s)).completion_time_s
        wins += good < poor
    # one-sided sign test at 5%: P(X >= 15 | n=20, p=0.5) = 0.021
    assert wins >= 15


def test_late_decode_shifts_issue():
    calls = []

    def slow(req):
        calls.append(req.tick_time_s)
        if len(calls) == 1:
            time.sleep(0.05)
        return req.pad_type

    r = run_race(Track(((0, 7.5),)), slow, budget_s=0.02)
    first = r.events[0]
    assert first.late and r.n_late >= 1
    assert first.issue_time_s == pytest.approx(first.decode_wall_s)
    assert first.issue_time_s > 0.02


@pytest.fixture(scope="module")
def model_race():
    grid = ElectrodeGrid.load()
    cfg = default_signature_config(gain=4.0).restricted(("RH", "feet", "relax", "humming"))
    params = init(Architecture(), 0)

    def once():
        feed = EEGFeed(cfg, 3, grid)
        return run_race(generate_track(4, seed=1), ModelDecoder(params), feed=feed, time_offset_s=100.0,
                        task_names=cfg.tasks)
    return once(), once(), params


def test_model_race_deterministic(model_race):
    a, b, _ = model_race
    assert a.completion_time_s == b.completion_time_s
    assert [e.predicted_label for e in a.events] == [e.predicted_label for e in b.events]
    assert a.examples.equals(b.examples)


def test_game_examples_labelled_by_tick_pad(model_race):
    r, _, _ = model_race
    assert len(r.examples) == len(r.events)
    np.testing.assert_array_equal(r.examples.labels, [e.chunk_start_type for e in r.events])
    np.testing.assert_allclose(r.examples.timestamps, [100.0 + e.chunk_start_time_s for e in r.events])
    assert set(np.unique(r.examples.origins)) == {1}


def test_decode_within_real_time_budget(model_race):
    r, _, _ = model_race
    assert r.decode_wall_max_s < 0.3


def test_model_decoder_params_untouched_by_race(model_race):
    _, _, params = model_race
    assert np.array_equal(params.flat, init(Architecture(), 0).flat)


def test_race_log_round_trip(tmp_path):
    r = run_race(Track(((0, 7.5), (1, 7.5)), seed=4), OracleDecoder(latency_s=0.3))
    write_race_log(r, tmp_path / "race.csv")
    header, events = read_race_log(tmp_path / "race.csv")
    assert header["track_seed"] == "4" and float(header["v_correct"]) == 2.5
    assert [(e.chunk_start_type, e.avatar_type_at_issue, e.predicted_label, e.applied) for e in events] == \
        [(e.chunk_start_type, e.avatar_type_at_issue, e.predicted_label, e.applied) for e in r.events]
    write_race_summary([r, r], tmp_path / "sum.csv")
    lines = (tmp_path / "sum.csv").read_text().splitlines()
    assert lines[0] == "race_id,time_s,acc1,acc2" and lines[2].startswith("2,6.474000,")
