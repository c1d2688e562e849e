"""Command-line entry point: ``smallnet <subcommand> [--seed N] [--config FILE] [--out PATH]``.

Exit status is 0 on success, 1 for invalid configuration or inputs and
2 when a pipeline step fails at run time.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import formats
from .config import ConfigError, RunConfig, load_config
from .dataset import ORIGIN_VIDEO
from .evaluation import cross_validate, rank_combinations
from .features import ElectrodeGrid
from .game import (EEGFeed, ModelDecoder, NoisyOracleDecoder, OracleDecoder, WrongDecoder, generate_track,
                   run_race, write_race_log, write_race_summary)
from .ica import correction_matrix, fit_ica, flag_eog_components
from .network import TrainingError, init, train
from .protocol import (RaceRow, derive_seed, recording_examples, run_session, stage2_pool, summarize_rows,
                       video_recording, record_videos)
from .signal import apply_chain, generate_recording

log = logging.getLogger("smallnet")

COMMANDS = ("gen-data", "fit-ica", "train", "cv", "rank-tasks", "race", "session", "report")


class InputError(ValueError):
    """A required input is missing or unusable."""


def _grid(cfg: RunConfig) -> ElectrodeGrid:
    path = cfg["paths.grid"]
    if path and not Path(path).is_file():
        raise InputError(f"paths.grid: no such file {path}")
    return ElectrodeGrid.load(path or None)


def _existing(cfg: RunConfig, key: str) -> Path:
    path = Path(cfg[key])
    if not path.is_file():
        raise InputError(f"{key}: no such file {path}")
    return path


def _correction(cfg: RunConfig):
    if not cfg["paths.correction"]:
        return None
    return formats.load_correction(_existing(cfg, "paths.correction"))[0]


def _out(args, default: str) -> Path:
    out = Path(args.out or default)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_data(cfg: RunConfig, args) -> str:
    gen = cfg.generator()
    kind = cfg["data.kind"]
    grid = _grid(cfg)
    correction = _correction(cfg)
    if kind == "stage2":
        data = stage2_pool(gen, cfg["data.n_per_task"], cfg.seed, grid, correction)
    elif kind == "video":
        data = record_videos(cfg.plan(), gen, grid, correction)
    elif kind == "blocks":
        rng = np.random.default_rng(derive_seed(cfg.seed, "video_track"))
        n_tasks = len(gen.tasks)
        order = np.concatenate([rng.permutation(n_tasks) for _ in range(-(-cfg["data.n_blocks"] // n_tasks))])
        script = [(gen.tasks[t], cfg["data.block_s"]) for t in order[:cfg["data.n_blocks"]]]
        rec = apply_chain(generate_recording(script, gen, seed=derive_seed(cfg.seed, "video_pilot")))
        data = recording_examples(rec, grid, correction, gen.tasks, ORIGIN_VIDEO, 0.0)
    else:
        raise ConfigError(f"data.kind must be blocks, stage2 or video, got {kind!r}")
    if cfg["data.shuffle_labels"]:
        rng = np.random.default_rng(derive_seed(cfg.seed, "shuffle"))
        data = data.relabel(rng.permutation(data.labels))
    out = _out(args, cfg["paths.dataset"])
    formats.save_dataset(data, out)
    return f"wrote {len(data)} examples ({kind}, {len(gen.tasks)} tasks) to {out}"


def cmd_fit_ica(cfg: RunConfig, args) -> str:
    rec = video_recording(cfg.plan(), cfg.generator(), 0)
    model = fit_ica(rec, seed=derive_seed(cfg.seed, "ica"))
    flagged = flag_eog_components(model, rec)
    out = _out(args, cfg["paths.correction"] or "correction.snc")
    formats.save_correction(correction_matrix(model), out, flagged)
    return f"ICA converged in {model.n_iter} iterations; flagged {sorted(flagged)}; wrote {out}"


def _dataset(cfg: RunConfig):
    return formats.load_dataset(_existing(cfg, "paths.dataset"))


def cmd_train(cfg: RunConfig, args) -> str:
    data = _dataset(cfg)
    correction = _correction(cfg)
    arch = cfg.architecture(max(len(data.task_names), int(data.labels.max()) + 1 if len(data) else 2))
    params, history = train(init(arch, derive_seed(cfg.seed, "init")), data, cfg.training())
    out = _out(args, cfg["paths.model"])
    formats.save_model(params, out, correction)
    last = history[-1] if history else {}
    return (f"trained {arch.variant} on {min(len(data), cfg['training.max_examples'])} examples, "
            f"{len(history)} epochs, holdout acc {last.get('holdout_acc', float('nan')):.3f}; wrote {out}")


def cmd_cv(cfg: RunConfig, args) -> str:
    data = _dataset(cfg)
    arch = cfg.architecture(len(data.task_names))
    result = cross_validate(data.most_recent(cfg["training.max_examples"]), arch, cfg.training(),
                            n_seeds=cfg["evaluation.seeds"], k=cfg["evaluation.folds"],
                            seed=derive_seed(cfg.seed, "cv"), purge_s=cfg["evaluation.purge_s"])
    out = _out(args, str(Path(cfg["paths.report_dir"]) / "cv.csv"))
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fold", "seed", "accuracy"])
        for (f, s), acc in np.ndenumerate(result.fold_accuracies):
            w.writerow([f, s, f"{acc:.6f}"])
    return f"cv accuracy {result.mean:.4f} +- {result.std:.4f} over {result.fold_accuracies.size} runs; wrote {out}"


def cmd_rank_tasks(cfg: RunConfig, args) -> str:
    pool = _dataset(cfg)
    ranking = rank_combinations(pool, cfg.architecture(4), cfg.training(), n_seeds=cfg["evaluation.seeds"],
                                k=cfg["evaluation.folds"], seed=derive_seed(cfg.seed, "cv"),
                                purge_s=0.0, alpha=cfg["evaluation.alpha"])
    out = _out(args, str(Path(cfg["paths.report_dir"]) / "ranking.csv"))
    ranking.write_csv(out)
    best = ranking.rows[0]
    return (f"ranked {len(ranking.rows)} task sets; best {'-'.join(best.tasks)} "
            f"({best.mean_ta:.3f}); wrote {out}")


def _decoder(cfg: RunConfig, race_index: int):
    kind = cfg["game.decoder"]
    latency = cfg["game.latency_s"]
    if kind == "oracle":
        return OracleDecoder(latency), None, None
    if kind == "noisy":
        return NoisyOracleDecoder(cfg["game.p_correct"], derive_seed(cfg.seed, "race_pilot", race_index),
                                  latency_s=latency), None, None
    if kind == "wrong":
        return WrongDecoder(), None, None
    if kind == "model":
        params, correction = formats.load_model(_existing(cfg, "paths.model"))
        return ModelDecoder(params, latency), params, correction
    raise ConfigError(f"game.decoder must be oracle, noisy, wrong or model, got {kind!r}")


def cmd_race(cfg: RunConfig, args) -> str:
    speed = cfg.speed_model()
    gen = cfg.generator()
    grid = _grid(cfg)
    out = Path(args.out or cfg["paths.report_dir"])
    results = []
    for i in range(cfg["game.n_races"]):
        decoder, params, correction = _decoder(cfg, i)
        feed = None
        if params is not None:
            feed = EEGFeed(gen, derive_seed(cfg.seed, "race_pilot", i), grid, correction)
        track = generate_track(cfg["game.n_pads"], derive_seed(cfg.seed, "race_track", i))
        results.append(run_race(track, decoder, speed, feed, task_names=gen.tasks))
    out.mkdir(parents=True, exist_ok=True)
    for i, r in enumerate(results, 1):
        write_race_log(r, out / f"race_{i:03d}.csv")
    write_race_summary(results, out / "races.csv")
    for i, r in enumerate(results, 1):
        log.info("race %d decode wall time max %.1f ms, %d late", i, 1e3 * r.decode_wall_max_s, r.n_late)
    r = results[-1]
    worst = max(x.decode_wall_max_s for x in results)
    return (f"{len(results)} race(s); last {r.completion_time_s:.2f} s, acc1 {r.acc1:.3f}, acc2 {r.acc2:.3f}; "
            f"max decode {1e3 * worst:.1f} ms; wrote {out}")


def cmd_session(cfg: RunConfig, args) -> str:
    gen = cfg.generator()
    report = run_session(cfg.plan(), cfg.architecture(len(gen.tasks)), cfg.training(), gen,
                         cfg.speed_model(), _grid(cfg))
    out = Path(args.out or cfg["paths.report_dir"])
    csv_path, _ = report.write(out)
    if report.error:
        raise RuntimeError(f"session stopped: {report.error} (partial report in {out})")
    return f"session with {len(report.rows)} races; wrote {csv_path}"


def read_session_csv(path: Path) -> tuple[list[RaceRow], str | None]:
    rows, error = [], None
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["race_id", "phase", "time_s", "acc1", "acc2", "test_acc"]:
            raise InputError(f"{path}: not a session report")
        for rec in reader:
            if rec and rec[0] == "#error":
                error = rec[1] if len(rec) > 1 else "unknown"
                continue
            rows.append(RaceRow(int(rec[0]), rec[1], *map(float, rec[2:6])))
    return rows, error


def cmd_report(cfg: RunConfig, args) -> str:
    out = Path(args.out or cfg["paths.report_dir"])
    path = out / "session_report.csv"
    if not path.is_file():
        raise InputError(f"no session report at {path}")
    rows, error = read_session_csv(path)
    text = summarize_rows(rows, error)
    (out / "session_summary.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return f"summarised {len(rows)} races from {path}"


HANDLERS = {
    "gen-data": cmd_gen_data, "fit-ica": cmd_fit_ica, "train": cmd_train, "cv": cmd_cv,
    "rank-tasks": cmd_rank_tasks, "race": cmd_race, "session": cmd_session, "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smallnet", description="Synthetic closed-loop EEG decoder toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--seed", type=int, default=None, help="master seed (overrides run.seed)")
        p.add_argument("--config", default=None, help="section.key = value file")
        p.add_argument("--out", default=None, help="output file or directory")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def run_command(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.set("run.seed", str(args.seed))
        summary = HANDLERS[args.command](cfg, args)
    except (ConfigError, InputError, formats.FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (TrainingError, RuntimeError, ValueError, OSError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return 2
    print(summary)
    return 0


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
