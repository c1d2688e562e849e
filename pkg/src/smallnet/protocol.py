"""Full training session: videos, warm-up races, game retraining, adaptive loop."""

from __future__ import annotations

import csv
import io
import logging
import time
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataset import ORIGIN_VIDEO, Dataset, concatenate
from .evaluation import CvResult, cross_validate
from .features import CHUNK_SAMPLES, ElectrodeGrid, TENSOR_SHAPE, Projector, chunk_starts, chunk_tensor, stream
from .game import EEGFeed, ModelDecoder, RaceResult, SpeedModel, generate_track, run_race
from .ica import correction_matrix, fit_ica, flag_eog_components
from .network import Architecture, ModelParams, TrainConfig, TrainingError, init, train
from .signal import BandSignature, SignatureConfig, apply_chain, generate_recording

log = logging.getLogger(__name__)

# master seed + offset (+ index) -> per-module seed
SEED_OFFSETS = {
    "video_track": 1_000,
    "video_pilot": 2_000,
    "ica": 3_000,
    "init": 4_000,
    "shuffle": 5_000,
    "race_track": 6_000,
    "race_pilot": 7_000,
    "cv": 8_000,
    "stage2_pilot": 9_000,
    "stage2_order": 10_000,
}

INTER_RECORDING_GAP_S = 10.0


def derive_seed(master: int, name: str, index: int = 0) -> int:
    return int(master) + SEED_OFFSETS[name] + int(index)


@dataclass(frozen=True)
class SessionPlan:
    n_videos: int = 20
    pads_per_video: int = 20
    video_pad_duration_s: float = 6.75
    n_warmup_races: int = 11
    n_retrain_races: int = 5
    n_adaptive_races: int = 5
    pads_per_race: int = 20
    buffer_cap: int = 2000
    cv_folds: int = 5
    cv_seeds: int = 1
    game_gain_scale: float = 0.6
    game_extra_noise_uv: float = 2.0
    reaction_delay_s: float = 0.0
    eog_threshold: float = 0.7
    seed: int = 0

    def __post_init__(self):
        for name in ("n_videos", "pads_per_video", "n_warmup_races", "n_retrain_races",
                     "n_adaptive_races", "pads_per_race", "buffer_cap", "cv_seeds"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_retrain_races > self.n_warmup_races:
            raise ValueError("n_retrain_races cannot exceed n_warmup_races")
        if self.cv_folds < 2:
            raise ValueError("cv_folds must be >= 2")
        if self.video_pad_duration_s <= 0:
            raise ValueError("video_pad_duration_s must be positive")


class ReplayBuffer:
    """Capped FIFO of game examples; the oldest are evicted first."""

    def __init__(self, cap: int = 2000, task_names=()):
        if cap < 1:
            raise ValueError("cap must be >= 1")
        self.cap = cap
        self.task_names = tuple(task_names)
        self._items: deque = deque(maxlen=cap)

    def __len__(self) -> int:
        return len(self._items)

    def extend(self, dataset: Dataset | None) -> None:
        if dataset is None:
            return
        for i in range(len(dataset)):
            self._items.append((dataset.tensors[i], int(dataset.labels[i]),
                                float(dataset.timestamps[i]), int(dataset.origins[i])))

    def to_dataset(self) -> Dataset:
        if not self._items:
            return Dataset.empty(self.task_names)
        tensors, labels, stamps, origins = zip(*self._items)
        return Dataset(np.stack(tensors), labels, stamps, origins, self.task_names)


def video_recording(plan: SessionPlan, config: SignatureConfig, index: int):
    """Scripted video ``index``: pads in order, each held for its on-screen duration."""
    track = generate_track(plan.pads_per_video, derive_seed(plan.seed, "video_track", index))
    script = [(config.tasks[t], plan.video_pad_duration_s) for t in track.pad_types]
    rec = generate_recording(script, config, seed=derive_seed(plan.seed, "video_pilot", index))
    return apply_chain(rec)


def recording_examples(rec, grid: ElectrodeGrid, correction, task_names, origin: int,
                       time_offset_s: float) -> Dataset:
    """Stream a filtered recording; label = task at the chunk's last sample."""
    index = {t: i for i, t in enumerate(task_names)}
    label_of = np.empty(rec.n_samples, dtype=np.int64)
    for start, end, label in rec.intervals:
        label_of[start:end] = index[label]
    starts = np.array(chunk_starts(rec.n_samples))
    tensors = np.stack([f.values.astype(np.float32) for f in stream(rec, grid, correction)]) if len(starts) else None
    if tensors is None:
        return Dataset.empty(task_names)
    ends = starts + CHUNK_SAMPLES
    return Dataset(tensors, label_of[ends - 1], time_offset_s + ends / rec.sample_rate_hz,
                   np.full(len(starts), origin), task_names)


def record_videos(plan: SessionPlan, config: SignatureConfig, grid: ElectrodeGrid | None = None,
                  correction: np.ndarray | None = None) -> Dataset:
    grid = grid or ElectrodeGrid.load()
    parts, clock = [], 0.0
    for v in range(plan.n_videos):
        rec = video_recording(plan, config, v)
        parts.append(recording_examples(rec, grid, correction, config.tasks, ORIGIN_VIDEO, clock))
        clock += rec.duration_s + INTER_RECORDING_GAP_S
    return concatenate(parts, config.tasks)


STAGE2_TRIAL_S = 1.0


def stage2_pool(config: SignatureConfig, n_per_task: int = 100, seed: int = 0,
                grid: ElectrodeGrid | None = None, correction: np.ndarray | None = None) -> Dataset:
    """Cued 1 s trials of every task, in shuffled balanced blocks.

    Each trial is zero-padded at the end to one 600-sample chunk so the
    standard feature pipeline applies unchanged.
    """
    if n_per_task < 1:
        raise ValueError("n_per_task must be >= 1")
    grid = grid or ElectrodeGrid.load()
    projector = Projector(grid)
    tasks = config.tasks
    rng = np.random.default_rng(derive_seed(seed, "stage2_order"))
    order = np.concatenate([rng.permutation(len(tasks)) for _ in range(n_per_task)])
    rec = apply_chain(generate_recording([(tasks[t], STAGE2_TRIAL_S) for t in order], config,
                                         seed=derive_seed(seed, "stage2_pilot")))
    eeg = rec.eeg
    tensors = np.empty((len(order),) + TENSOR_SHAPE, dtype=np.float32)
    padded = np.zeros((eeg.shape[0], CHUNK_SAMPLES))
    for i, (start, end, _) in enumerate(rec.intervals):
        padded[:, :end - start] = eeg[:, start:end]
        tensors[i] = chunk_tensor(padded, projector, correction)
    stamps = np.array([end for _, end, _ in rec.intervals]) / rec.sample_rate_hz
    return Dataset(tensors, order, stamps, np.full(len(order), ORIGIN_VIDEO), tasks)


def identical_task_config(n_tasks: int = 8, band=(8.0, 12.0), electrodes=("C3", "Cz", "C4"),
                          gain: float = 4.0, seed: int = 0) -> SignatureConfig:
    """Every task shares one signature, so no task set is truly better."""
    names = [f"task{i + 1}" for i in range(n_tasks)]
    sig = (BandSignature(band[0], band[1], tuple(electrodes), gain),)
    return SignatureConfig(signatures={n: sig for n in names}, seed=seed)


def fit_session_correction(plan: SessionPlan, config: SignatureConfig) -> np.ndarray:
    """ICA on the first video; the matrix is then fixed for the whole session."""
    rec = video_recording(plan, config, 0)
    model = fit_ica(rec, seed=derive_seed(plan.seed, "ica"))
    flag_eog_components(model, rec, threshold=plan.eog_threshold)
    log.info("ICA flagged components %s", sorted(model.flagged_eog))
    return correction_matrix(model)


def retrain_after_race(model: ModelParams, buffer: ReplayBuffer, train_config: TrainConfig,
                       seed: int = 0, warm_start: bool = False) -> ModelParams:
    """Fit a fresh model on the buffer; ``model`` itself is never modified.

    On a training failure the previous model is returned unchanged.
    """
    if len(buffer) == 0:
        raise ValueError("replay buffer is empty")
    data = buffer.to_dataset()
    start = model.copy() if warm_start else init(model.arch, seed)
    try:
        new, _ = train(start, data, replace(train_config, shuffle_seed=seed))
    except TrainingError as exc:
        log.error("retraining failed, keeping previous model: %s", exc)
        return model
    return new


@dataclass
class RaceRow:
    race_id: int
    phase: str
    time_s: float
    acc1: float
    acc2: float
    test_acc: float
    decode_wall_max_s: float = 0.0


@dataclass
class SessionReport:
    rows: list[RaceRow] = field(default_factory=list)
    snapshots: dict[str, ModelParams] = field(default_factory=dict)
    video_cv: CvResult | None = None
    n_video_examples: int = 0
    flagged_components: int = 0
    error: str | None = None

    def phase_rows(self, phase: str) -> list[RaceRow]:
        return [r for r in self.rows if r.phase == phase]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["race_id", "phase", "time_s", "acc1", "acc2", "test_acc"])
        for r in self.rows:
            w.writerow([r.race_id, r.phase, f"{r.time_s:.6f}", f"{r.acc1:.6f}", f"{r.acc2:.6f}", f"{r.test_acc:.6f}"])
        if self.error:
            w.writerow(["#error", self.error])
        return buf.getvalue()

    def summary_text(self) -> str:
        return summarize_rows(self.rows, self.error, self.n_video_examples)

    def write(self, out_dir: str | Path) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_path, txt_path = out / "session_report.csv", out / "session_summary.txt"
        csv_path.write_text(self.to_csv(), encoding="utf-8")
        txt_path.write_text(self.summary_text(), encoding="utf-8")
        return csv_path, txt_path


def pearson(x, y) -> float:
    x, y = np.asarray(x, float), np.asarray(y, float)
    if len(x) < 2 or np.ptp(x) == 0 or np.ptp(y) == 0:
        return float("nan")
    return float(np.corrcoef(x, y)[0, 1])


def summarize_rows(rows: list[RaceRow], error: str | None = None, n_video_examples: int = 0) -> str:
    lines = ["# accuracy vs race completion time"]
    if n_video_examples:
        lines.append(f"video_examples = {n_video_examples}")
    for phase in ("warmup", "adaptive"):
        sel = [r for r in rows if r.phase == phase]
        if not sel:
            continue
        t = [r.time_s for r in sel]
        a2 = [r.acc2 for r in sel]
        ta = [r.test_acc for r in sel]
        lines += [
            f"[{phase}]",
            f"races = {len(sel)}",
            f"mean_time_s = {np.mean(t):.4f}",
            f"mean_acc1 = {np.mean([r.acc1 for r in sel]):.4f}",
            f"mean_acc2 = {np.mean(a2):.4f}",
            f"mean_test_acc = {np.mean(ta):.4f}",
            f"test_minus_online = {np.mean(ta) - np.mean(a2):.4f}",
            f"pearson_acc2_time = {pearson(a2, t):.4f}",
            f"pearson_test_acc_time = {pearson(ta, t):.4f}",
            "pairs(time_s, acc2, test_acc) = " + "; ".join(f"{x:.3f},{y:.3f},{z:.3f}" for x, y, z in zip(t, a2, ta)),
        ]
    if error:
        lines.append(f"error = {error}")
    return "\n".join(lines) + "\n"


def _cv(data: Dataset, arch: Architecture, cfg: TrainConfig, plan: SessionPlan, tag: int) -> CvResult:
    return cross_validate(data.most_recent(cfg.max_examples), arch, cfg, n_seeds=plan.cv_seeds,
                          k=plan.cv_folds, seed=derive_seed(plan.seed, "cv", 100 * tag))


def run_session(plan: SessionPlan, arch: Architecture, train_config: TrainConfig, generator: SignatureConfig,
                speed_model: SpeedModel = SpeedModel(), grid: ElectrodeGrid | None = None) -> SessionReport:
    """Video training, warm-up races, game-data retraining, then adaptive races.

    A failing phase truncates the report and records the error; rows from
    earlier phases are kept.
    """
    grid = grid or ElectrodeGrid.load()
    tasks = generator.tasks
    if len(tasks) != arch.n_classes:
        raise ValueError(f"generator has {len(tasks)} tasks, architecture expects {arch.n_classes}")
    if plan.buffer_cap < train_config.batch_size:
        raise ValueError("buffer_cap must be >= batch_size")
    game_cfg = generator.shifted(plan.game_gain_scale, plan.game_extra_noise_uv)
    report = SessionReport()
    clock = 0.0
    phase = "video"
    try:
        correction = fit_session_correction(plan, generator)
        report.flagged_components = int(np.sum(np.abs(np.diag(correction)) < 0.999))
        videos = record_videos(plan, generator, grid, correction)
        report.n_video_examples = len(videos)
        clock = videos.timestamps[-1] + INTER_RECORDING_GAP_S
        seed = derive_seed(plan.seed, "init")
        model, _ = train(init(arch, seed), videos, replace(train_config, shuffle_seed=derive_seed(plan.seed, "shuffle")))
        report.snapshots["video"] = model
        report.video_cv = _cv(videos, arch, train_config, plan, 0)
        test_acc = report.video_cv.mean
        del videos

        results: list[RaceResult] = []
        race_id = 0

        def race(params: ModelParams) -> RaceResult:
            nonlocal race_id, clock
            track = generate_track(plan.pads_per_race, derive_seed(plan.seed, "race_track", race_id))
            feed = EEGFeed(game_cfg, derive_seed(plan.seed, "race_pilot", race_id), grid, correction)
            result = run_race(track, ModelDecoder(params), speed_model, feed, time_offset_s=clock,
                              reaction_delay_s=plan.reaction_delay_s, task_names=tasks)
            clock += result.completion_time_s + INTER_RECORDING_GAP_S
            race_id += 1
            log.info("race %d: %.1f s acc1 %.3f acc2 %.3f", race_id, result.completion_time_s,
                     result.acc1, result.acc2)
            return result

        phase = "warmup"
        for _ in range(plan.n_warmup_races):
            r = race(model)
            results.append(r)
            report.rows.append(RaceRow(race_id, "warmup", r.completion_time_s, r.acc1, r.acc2, test_acc,
                                       r.decode_wall_max_s))

        phase = "retrain"
        buffer = ReplayBuffer(plan.buffer_cap, tasks)
        for r in results[-plan.n_retrain_races:]:
            buffer.extend(r.examples)

        def refit(tag: int):
            t0 = time.perf_counter()
            new = retrain_after_race(model, buffer, train_config, seed=derive_seed(plan.seed, "init", tag))
            cv = _cv(buffer.to_dataset(), arch, train_config, plan, tag)
            log.info("retrained on %d examples in %.1f s; test acc %.3f", len(buffer),
                     time.perf_counter() - t0, cv.mean)
            return new, cv.mean

        model, test_acc = refit(1)
        report.snapshots["retrain"] = model

        phase = "adaptive"
        for j in range(plan.n_adaptive_races):
            r = race(model)
            report.rows.append(RaceRow(race_id, "adaptive", r.completion_time_s, r.acc1, r.acc2, test_acc,
                                       r.decode_wall_max_s))
            buffer.extend(r.examples)
            # swap point: the next race uses the new model
            model, test_acc = refit(2 + j)
        report.snapshots["adaptive"] = model
    except Exception as exc:  # noqa: BLE001 - report keeps finished phases
        log.exception("session failed during %s", phase)
        report.error = f"{phase}: {type(exc).__name__}: {exc}"
    return report
