import numpy as np
import pytest

import smallnet.protocol as protocol
from smallnet.dataset import Dataset
from smallnet.features import TENSOR_SHAPE
from smallnet.game import NoisyOracleDecoder, generate_track, run_race
from smallnet.network import Architecture, TrainConfig, TrainingError, init
from smallnet.protocol import (ReplayBuffer, SessionPlan, derive_seed, identical_task_config, pearson,
                               record_videos, retrain_after_race, run_session, stage2_pool)
from smallnet.signal import default_signature_config

TASKS = ("RH", "feet", "relax", "humming")
FAST = TrainConfig(learning_rate=0.05, max_epochs=1)


def _examples(n, start=0):
    x = np.random.default_rng(start).gamma(2.0, 1.0, size=(n,) + TENSOR_SHAPE)
    t = np.arange(start, start + n, dtype=float)
    return Dataset(x, np.arange(start, start + n) % 4, t, np.ones(n), TASKS)


@pytest.fixture(scope="module")
def generator():
    return default_signature_config(gain=4.0).restricted(TASKS)


def test_buffer_keeps_most_recent():
    buf = ReplayBuffer(2000, TASKS)
    for start in range(0, 2500, 500):
        buf.extend(_examples(500, start))
        assert len(buf) <= 2000
    data = buf.to_dataset()
    assert len(data) == 2000
    np.testing.assert_array_equal(data.timestamps, np.arange(500, 2500))


def test_buffer_evicts_oldest_first():
    buf = ReplayBuffer(3, TASKS)
    buf.extend(_examples(2, 0))
    buf.extend(_examples(2, 10))
    np.testing.assert_array_equal(buf.to_dataset().timestamps, [1, 10, 11])
    assert len(ReplayBuffer(5).to_dataset()) == 0


def test_plan_validation():
    with pytest.raises(ValueError):
        SessionPlan(n_videos=0)
    with pytest.raises(ValueError):
        SessionPlan(n_retrain_races=12)
    with pytest.raises(ValueError):
        SessionPlan(buffer_cap=0)


def test_seed_derivation():
    assert derive_seed(7, "ica") == 7 + protocol.SEED_OFFSETS["ica"]
    assert derive_seed(7, "race_track", 3) == derive_seed(7, "race_track") + 3
    assert len(set(protocol.SEED_OFFSETS.values())) == len(protocol.SEED_OFFSETS)


def test_video_labels_follow_script(generator):
    plan = SessionPlan(n_videos=2, pads_per_video=3, video_pad_duration_s=2.0)
    data = record_videos(plan, generator)
    per_video = (6 * 500 - 600) // 150 + 1
    assert len(data) == 2 * per_video
    assert set(np.unique(data.origins)) == {0}
    assert np.all(np.diff(data.timestamps) > 0)
    for v in range(2):
        pads = generate_track(3, derive_seed(plan.seed, "video_track", v)).pad_types
        last_sample = 150 * np.arange(per_video) + 599
        np.testing.assert_array_equal(data.labels[v * per_video:(v + 1) * per_video],
                                      np.array(pads)[last_sample // 1000])
    assert record_videos(plan, generator).equals(data)


def test_full_video_plan_duration():
    plan = SessionPlan()
    seconds = plan.pads_per_video * plan.video_pad_duration_s
    per_video = (int(seconds * 500) - 600) // 150 + 1
    assert 8500 <= plan.n_videos * per_video <= 9500


def test_retrain_deterministic_and_non_mutating():
    buf = ReplayBuffer(2000, TASKS)
    buf.extend(_examples(120))
    old = init(Architecture(), 0)
    before = old.flat.copy()
    a = retrain_after_race(old, buf, FAST, seed=4)
    b = retrain_after_race(old, buf, FAST, seed=4)
    assert a is not old and np.array_equal(a.flat, b.flat)
    assert np.array_equal(old.flat, before)


def test_retrain_failure_keeps_model(monkeypatch, caplog):
    def diverge(*a, **k):
        raise TrainingError("non-finite loss at epoch 0, batch 0")

    monkeypatch.setattr(protocol, "train", diverge)
    buf = ReplayBuffer(2000, TASKS)
    buf.extend(_examples(60))
    old = init(Architecture(), 0)
    assert retrain_after_race(old, buf, FAST) is old
    assert "keeping previous model" in caplog.text


def test_retrain_empty_buffer_rejected():
    with pytest.raises(ValueError):
        retrain_after_race(init(Architecture(), 0), ReplayBuffer(10), FAST)


def test_buffer_cap_bounds_training_set(monkeypatch):
    seen = []
    real = protocol.train

    def spy(params, data, config):
        seen.append(len(data))
        return real(params, data, config)

    monkeypatch.setattr(protocol, "train", spy)
    buf = ReplayBuffer(50, TASKS)
    buf.extend(_examples(80))
    retrain_after_race(init(Architecture(), 0), buf, FAST)
    assert seen == [50]


TINY = SessionPlan(n_videos=2, pads_per_video=4, video_pad_duration_s=8.0, n_warmup_races=2, n_retrain_races=1,
                   n_adaptive_races=2, pads_per_race=3, cv_folds=2, cv_seeds=1)


@pytest.fixture(scope="module")
def tiny_report(generator):
    return run_session(TINY, Architecture(), FAST, generator)


def test_session_rows_and_phases(tiny_report):
    r = tiny_report
    assert r.error is None
    assert len(r.rows) == TINY.n_warmup_races + TINY.n_adaptive_races
    assert [row.phase for row in r.rows] == ["warmup"] * 2 + ["adaptive"] * 2
    assert [row.race_id for row in r.rows] == [1, 2, 3, 4]
    assert set(r.snapshots) == {"video", "retrain", "adaptive"}
    assert all(row.test_acc == r.video_cv.mean for row in r.phase_rows("warmup"))


def test_session_files(tiny_report, tmp_path):
    csv_path, txt_path = tiny_report.write(tmp_path)
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "race_id,phase,time_s,acc1,acc2,test_acc" and len(lines) == 5
    text = txt_path.read_text()
    assert "[warmup]" in text and "[adaptive]" in text and "pearson_acc2_time" in text


def test_session_deterministic(tiny_report, generator):
    again = run_session(TINY, Architecture(), FAST, generator)
    assert again.to_csv() == tiny_report.to_csv()
    assert again.summary_text() == tiny_report.summary_text()


def test_session_failure_truncates(generator, monkeypatch):
    def boom(*a, **k):
        raise RuntimeError("trainer crashed")

    monkeypatch.setattr(protocol, "retrain_after_race", boom)
    report = run_session(TINY, Architecture(), FAST, generator)
    assert report.error.startswith("retrain") and "trainer crashed" in report.error
    assert [row.phase for row in report.rows] == ["warmup", "warmup"]
    assert report.to_csv().splitlines()[-1].startswith("#error")


def test_session_rejects_class_mismatch():
    with pytest.raises(ValueError):
        run_session(TINY, Architecture(n_classes=3), FAST, default_signature_config().restricted(TASKS))


def test_stage2_pool_balanced():
    pool = stage2_pool(identical_task_config(), n_per_task=3)
    assert len(pool) == 24 and len(pool.task_names) == 8
    assert np.array_equal(np.bincount(pool.labels), np.full(8, 3))
    np.testing.assert_allclose(pool.timestamps, np.arange(1, 25))


def test_accuracy_time_correlation_negative():
    times, accs = [], []
    for i, p in enumerate(np.linspace(0.25, 0.95, 8)):
        r = run_race(generate_track(seed=50 + i), NoisyOracleDecoder(p, seed=i))
        times.append(r.completion_time_s)
        accs.append(r.acc2)
    assert pearson(accs, times) < 0
    assert np.isnan(pearson([1, 1, 1], [3, 4, 5]))
