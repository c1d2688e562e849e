"""One test per acceptance criterion, each run at its stated tolerance.

Every test records a PASS/FAIL line that is repeated in the terminal
summary. Criteria 4, 7, 9 and 11 take minutes and are marked ``slow``.
"""

import csv
import time
from pathlib import Path

import numpy as np
import pytest

from smallnet.cli import run_command
from smallnet.evaluation import kruskal_wallis
from smallnet.features import CHUNK_SAMPLES, HOP_SAMPLES, TENSOR_SHAPE, stream, welch_psd
from smallnet.game import (EEGFeed, ModelDecoder, OracleDecoder, Track, WrongDecoder, generate_track, run_race)
from smallnet.ica import apply_correction, correction_matrix
from smallnet.network import VARIANTS, Architecture, init
from smallnet.protocol import ReplayBuffer
from smallnet.dataset import Dataset
from smallnet.signal import SAMPLE_RATE_HZ, apply_chain, default_signature_config, generate_recording

from oracles import gradient_check, kruskal_bruteforce, planted_blink_mixture, welch_direct


def _corr(a, b):
    a, b = a - a.mean(), b - b.mean()
    return float(a @ b / np.linalg.norm(a) / np.linalg.norm(b))


def test_c01_tensor_contract(grid, verdict):
    cfg = default_signature_config(4.0).restricted(("RH", "feet", "relax", "humming"))
    rec = apply_chain(generate_recording([("RH", 3.0), ("feet", 3.0)], cfg, seed=1))
    out = list(stream(rec, grid))
    shapes = {t.values.shape for t in out}
    starts = np.array([t.origin_time_s for t in out])
    cadence = set(np.round(np.diff(starts) * 1000, 9))
    overlap_ms = (CHUNK_SAMPLES - HOP_SAMPLES) / SAMPLE_RATE_HZ * 1000
    ok = (shapes == {TENSOR_SHAPE} and cadence == {300.0} and overlap_ms == 900.0
          and len(out) == (rec.n_samples - CHUNK_SAMPLES) // HOP_SAMPLES + 1
          and HOP_SAMPLES / CHUNK_SAMPLES == 0.25)
    verdict(1, "tensor contract", ok, f"shapes {shapes}, cadence {cadence} ms, overlap {overlap_ms} ms")


def test_c02_welch_oracle(verdict):
    rng = np.random.default_rng(2)
    freqs = rng.uniform(10.0, 240.0, 10)
    t = np.arange(CHUNK_SAMPLES) / SAMPLE_RATE_HZ
    chunk = np.array([np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi)) for f in freqs])
    psd = welch_psd(chunk)
    ref = np.array([welch_direct(x) for x in chunk])
    bins_ok = all(int(np.argmax(p)) == round(f / (250 / 128)) for p, f in zip(psd, freqs))
    rel = float(np.max(np.abs(psd - ref)) / np.max(np.abs(ref)))
    verdict(2, "welch oracle", bins_ok and rel < 1e-9, f"argmax bins match {bins_ok}, relative error {rel:.2e}")


def test_c03_gradient_check(verdict):
    rng = np.random.default_rng(3)
    x = rng.gamma(2.0, 1.0, size=(3,) + TENSOR_SHAPE)
    errors = {v: gradient_check(init(Architecture(v), seed=3), x, np.array([0, 2, 3]), n_coords=200, step=1e-4)
              for v in VARIANTS}
    worst = max(errors.values())
    verdict(3, "gradient check", worst < 1e-4, ", ".join(f"{v} {e:.1e}" for v, e in errors.items()))


def _cv_mean(tmp_path, shuffle: bool) -> float:
    name = "shuffled" if shuffle else "gain4"
    cfg = tmp_path / f"{name}.cfg"
    cfg.write_text(f"generator.gain = 4.0\ndata.block_s = 12\ndata.n_blocks = 51\n"
                   f"data.shuffle_labels = {'yes' if shuffle else 'no'}\npaths.dataset = {tmp_path / name}.snb\n"
                   "training.max_examples = 2000\ntraining.max_epochs = 8\nevaluation.folds = 5\n"
                   "evaluation.seeds = 5\n")
    assert run_command(["gen-data", "--config", str(cfg), "--seed", "0"]) == 0
    out = tmp_path / f"{name}_cv.csv"
    assert run_command(["cv", "--config", str(cfg), "--seed", "0", "--out", str(out)]) == 0
    with open(out) as fh:
        return float(np.mean([float(r["accuracy"]) for r in csv.DictReader(fh)]))


@pytest.mark.slow
def test_c04_separable_and_chance(tmp_path, verdict):
    t0 = time.perf_counter()
    real = _cv_mean(tmp_path, False)
    shuffled = _cv_mean(tmp_path, True)
    dt = time.perf_counter() - t0
    ok = real >= 0.90 and abs(shuffled - 0.25) <= 0.05 and dt < 300
    verdict(4, "separability and chance", ok, f"cv {real:.4f}, shuffled {shuffled:.4f}, {dt:.0f} s")


def test_c05_ica_correction(verdict):
    p = planted_blink_mixture()
    src = p["model"].sources(p["rec"].eeg)
    blink_comp = int(np.argmax([abs(_corr(c, p["blink"])) for c in src]))
    c = correction_matrix(p["model"])
    cleaned = apply_correction(p["rec"].eeg, c)[p["channel"]]
    r_blink, r_sine = abs(_corr(cleaned, p["blink"])), abs(_corr(cleaned, p["sine"]))
    idem = float(np.max(np.abs(c @ c - c)))
    ok = blink_comp in p["flagged"] and r_blink < 0.1 and r_sine > 0.9 and idem < 1e-6
    verdict(5, "ica correction", ok, f"flagged {sorted(p['flagged'])} (blink {blink_comp}), "
                                     f"|r| blink {r_blink:.4f}, sine {r_sine:.4f}, idempotence {idem:.1e}")


def test_c06_kruskal_wallis(verdict):
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(100):
        k = int(rng.integers(2, 5))
        sizes = rng.integers(1, 4, size=k)
        while sizes.sum() > 12 or sizes.sum() < k + 1:
            sizes = rng.integers(1, 4, size=k)
        groups = [list(rng.integers(0, 6, size=s).astype(float)) for s in sizes]
        if len(set(np.concatenate(groups))) == 1:
            groups[0][0] += 1.0
        h, p = kruskal_wallis(groups)
        hb, pb = kruskal_bruteforce(groups)
        worst = max(worst, abs(h - hb), abs(p - pb))
    h, p = kruskal_wallis([[1, 2, 3], [4, 5, 6], [7, 8, 9]])
    ok = worst < 1e-12 and h == 7.2 and abs(p - 0.0273) < 1e-3
    verdict(6, "kruskal-wallis oracle", ok, f"max deviation {worst:.1e} over 100; fixture H {h!r}, p {p:.5f}")


@pytest.mark.slow
def test_c07_task_ranking(tmp_path, verdict):
    cfg = tmp_path / "rank.cfg"
    cfg.write_text(f"data.kind = stage2\ndata.n_per_task = 100\ngenerator.identical_tasks = yes\n"
                   "generator.tasks = t1,t2,t3,t4,t5,t6,t7,t8\ngenerator.gain = 4.0\n"
                   f"paths.dataset = {tmp_path / 'pool.snb'}\ntraining.max_epochs = 3\n"
                   "evaluation.seeds = 5\nevaluation.folds = 5\n")
    t0 = time.perf_counter()
    assert run_command(["gen-data", "--config", str(cfg), "--seed", "0"]) == 0
    out = tmp_path / "ranking.csv"
    assert run_command(["rank-tasks", "--config", str(cfg), "--seed", "0", "--out", str(out)]) == 0
    dt = time.perf_counter() - t0
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    clean = sum(int(r["n_sig_diff"]) == 0 for r in rows)
    ok = len(rows) == 70 and clean >= 68 and dt < 1200
    verdict(7, "task ranking", ok, f"{len(rows)} rows, {clean} with n_sig_diff = 0, {dt:.0f} s")


def test_c08_race_loop(verdict):
    track = generate_track()
    oracle = run_race(track, OracleDecoder())
    wrong = run_race(track, WrongDecoder())
    # hand enumeration in tests/test_game.py::test_boundary_latency_scenario
    lat = run_race(Track(((0, 7.5), (1, 7.5))), OracleDecoder(latency_s=0.3))
    bad = [e.chunk_start_time_s for e in lat.events if e.chunk_start_type != e.avatar_type_at_issue]
    lat_ok = (abs(lat.completion_time_s - 6.474) < 1e-9 and len(lat.events) == 22 and lat.acc1 == 1.0
              and abs(lat.acc2 - 21 / 22) < 1e-12 and len(bad) == 1 and abs(bad[0] - 3.0) < 1e-9)
    ok = (abs(oracle.completion_time_s - 60.0) <= 2.0 and oracle.acc1 == oracle.acc2 == 1.0 and lat_ok
          and wrong.completion_time_s > oracle.completion_time_s)
    verdict(8, "race loop", ok, f"oracle {oracle.completion_time_s:.2f} s acc {oracle.acc1}/{oracle.acc2}; "
                                f"latency acc1 {lat.acc1:.4f} acc2 {lat.acc2:.4f}; "
                                f"wrong {wrong.completion_time_s:.2f} s")


def test_c10_real_time_budget(grid, verdict):
    cfg = default_signature_config(4.0).restricted(("RH", "feet", "relax", "humming"))
    params = init(Architecture(), 0)
    per_race = []
    for i in range(3):
        r = run_race(generate_track(seed=10 + i), ModelDecoder(params), feed=EEGFeed(cfg, 20 + i, grid),
                     task_names=cfg.tasks)
        per_race.append(r.decode_wall_max_s)
    worst = max(per_race)
    verdict(10, "real-time budget", worst < 0.3,
            "max decode per race " + ", ".join(f"{1e3 * w:.1f} ms" for w in per_race))


@pytest.fixture(scope="module")
def sessions(tmp_path_factory):
    """The default session, run twice through the command line with the same master seed."""
    root = tmp_path_factory.mktemp("session")
    runs, times = [], []
    for name in ("a", "b"):
        t0 = time.perf_counter()
        code = run_command(["session", "--seed", "0", "--out", str(root / name)])
        times.append(time.perf_counter() - t0)
        runs.append((code, root / name))
    return runs, times


def _summary(path: Path) -> dict:
    out, phase = {}, None
    for line in path.read_text().splitlines():
        if line.startswith("["):
            phase = line.strip("[]")
        elif " = " in line and not line.startswith("pairs"):
            key, value = line.split(" = ", 1)
            out[f"{phase}.{key}" if phase else key] = value
    return out


@pytest.mark.slow
def test_c09_adaptive_protocol(sessions, verdict):
    rng = np.random.default_rng(9)
    buf = ReplayBuffer(2000, ("a",))
    sizes, pushed = [], 0
    for n in rng.integers(1, 400, size=20):
        stamps = np.arange(pushed, pushed + n, dtype=float)
        buf.extend(Dataset(np.zeros((n,) + TENSOR_SHAPE), np.zeros(n, int), stamps, np.ones(n), ("a",)))
        pushed += n
        sizes.append(len(buf))
    kept = buf.to_dataset().timestamps
    fifo = np.array_equal(kept, np.arange(pushed - len(kept), pushed, dtype=float))
    code, out = sessions[0][0]
    s = _summary(out / "session_summary.txt")
    n_video = int(s.get("video_examples", 0))
    warm_gap = float(s["warmup.test_minus_online"])
    adapt_gap = float(s["adaptive.test_minus_online"])
    runtime = sessions[1][0]
    ok = (code == 0 and max(sizes) <= 2000 and fifo and 8500 <= n_video <= 9500
          and warm_gap > 0.10 and abs(adapt_gap) <= 0.10 and runtime < 900)
    verdict(9, "adaptive protocol", ok,
            f"buffer max {max(sizes)} fifo {fifo}; video examples {n_video}; "
            f"video-trained test minus acc2 {warm_gap:+.4f}; game-trained {adapt_gap:+.4f}; {runtime:.0f} s")


@pytest.mark.slow
def test_c11_session_determinism(sessions, verdict):
    (code_a, a), (code_b, b) = sessions[0]
    names = ("session_report.csv", "session_summary.txt")
    same = all((a / n).read_bytes() == (b / n).read_bytes() for n in names)
    ok = code_a == code_b == 0 and same and max(sessions[1]) < 900
    verdict(11, "session determinism", ok,
            f"byte-identical {same}; runs {sessions[1][0]:.0f} s and {sessions[1][1]:.0f} s")
