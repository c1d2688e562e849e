"""Race-game simulator in the style of BrainRunners.

The avatar runs along a track of coloured pads. Every 300 ms the trailing
1.2 s of pilot EEG is decoded into a command; a command matching the pad
under the avatar gives full speed, a wrong one or none slows it down.

Time is simulated. Wall-clock decode time is measured and only matters
when it overruns the 300 ms budget: such an event is marked late and its
command lands at the real issue time.
"""

from __future__ import annotations

import bisect
import heapq
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq

from .dataset import ORIGIN_GAME, Dataset
from .features import CHUNK_SAMPLES, HOP_SAMPLES, TENSOR_SHAPE, ChunkRing, ElectrodeGrid, Projector, chunk_tensor
from .signal import ACQUISITION_CHAIN, EOG_INDEX, SAMPLE_RATE_HZ, CHANNEL_NAMES, FilterChain, FilterSpec, PilotSource, SignatureConfig

PAD_LENGTH_M = 7.5
DEFAULT_N_PADS = 20
N_PAD_TYPES = 4
CADENCE_S = HOP_SAMPLES / SAMPLE_RATE_HZ
WINDOW_S = CHUNK_SAMPLES / SAMPLE_RATE_HZ
DECODE_BUDGET_S = 0.3


@dataclass(frozen=True)
class Track:
    pads: tuple[tuple[int, float], ...]
    seed: int = 0

    def __post_init__(self):
        if not self.pads:
            raise ValueError("a track needs at least one pad")
        if any(length <= 0 for _, length in self.pads):
            raise ValueError("pad lengths must be positive")
        object.__setattr__(self, "_ends", tuple(np.cumsum([length for _, length in self.pads]).tolist()))

    @property
    def length_m(self) -> float:
        return self._ends[-1]

    @property
    def pad_types(self) -> list[int]:
        return [t for t, _ in self.pads]

    def pad_end(self, index: int) -> float:
        return self._ends[index]

    def pad_index_at(self, position_m: float) -> int:
        return min(bisect.bisect_right(self._ends, position_m), len(self.pads) - 1)


def generate_track(n_pads: int = DEFAULT_N_PADS, seed: int = 0, pad_length_m: float = PAD_LENGTH_M,
                   n_types: int = N_PAD_TYPES) -> Track:
    if n_pads < 1:
        raise ValueError("n_pads must be >= 1")
    types = np.random.default_rng(seed).integers(0, n_types, n_pads)
    return Track(tuple((int(t), float(pad_length_m)) for t in types), seed)


@dataclass(frozen=True)
class SpeedModel:
    v_correct: float = 2.5
    v_none: float = 1.0
    v_wrong: float = 0.75
    command_effect_duration_s: float = CADENCE_S

    def __post_init__(self):
        if not self.v_correct > self.v_none >= self.v_wrong > 0:
            raise ValueError("speeds must satisfy v_correct > v_none >= v_wrong > 0")
        if self.command_effect_duration_s <= 0:
            raise ValueError("command_effect_duration_s must be positive")


@dataclass(frozen=True)
class AvatarState:
    time_s: float = 0.0
    position_m: float = 0.0
    pad_index: int = 0
    command: int | None = None
    command_until_s: float = -math.inf
    finish_time_s: float | None = None

    @property
    def finished(self) -> bool:
        return self.finish_time_s is not None


def velocity(state: AvatarState, track: Track, speed: SpeedModel) -> float:
    if state.command is None or state.time_s >= state.command_until_s:
        return speed.v_none
    return speed.v_correct if state.command == track.pads[state.pad_index][0] else speed.v_wrong


def _integrate(state: AvatarState, dt: float, track: Track, speed: SpeedModel,
               crossings: list | None = None) -> AvatarState:
    t, pos, pad = state.time_s, state.position_m, state.pad_index
    end_t = t + dt
    while t < end_t and state.finish_time_s is None:
        v = velocity(replace(state, time_s=t, pad_index=pad), track, speed)
        t_pad = (track.pad_end(pad) - pos) / v
        seg = end_t - t
        hit_pad = t_pad <= seg
        if hit_pad:
            seg = t_pad
        if state.command is not None and t < state.command_until_s < t + seg:
            seg, hit_pad = state.command_until_s - t, False
        t += seg
        if hit_pad:
            pos = track.pad_end(pad)
            if pad + 1 == len(track.pads):
                state = replace(state, finish_time_s=t)
                break
            pad += 1
            if crossings is not None:
                crossings.append((t, pad))
        else:
            pos += v * seg
    return replace(state, time_s=t if state.finish_time_s is None else state.finish_time_s,
                   position_m=pos, pad_index=pad)


def step(state: AvatarState, command: int | None, speed_model: SpeedModel, dt: float,
         track: Track) -> AvatarState:
    """Apply ``command`` (if any) at ``state.time_s`` and advance ``dt`` seconds.

    Pad boundaries and command expiry inside the step are integrated
    exactly.
    """
    if dt < 0:
        raise ValueError("dt must be non-negative")
    if command is not None and not state.finished:
        state = replace(state, command=int(command),
                        command_until_s=state.time_s + speed_model.command_effect_duration_s)
    return _integrate(state, dt, track, speed_model)


# --- decoders -------------------------------------------------------------

@dataclass(frozen=True)
class DecodeRequest:
    tick_time_s: float
    tensor: np.ndarray | None
    pad_type: int
    pad_index: int


class OracleDecoder:
    """Reads the pad under the avatar at the decode tick."""

    def __init__(self, latency_s: float = 0.0):
        self.latency_s = latency_s

    def __call__(self, request: DecodeRequest) -> int:
        return request.pad_type


class NoisyOracleDecoder:
    """Correct with probability ``p_correct``, otherwise a uniformly drawn wrong label."""

    def __init__(self, p_correct: float, seed: int = 0, n_classes: int = N_PAD_TYPES, latency_s: float = 0.0):
        self.p_correct = p_correct
        self.rng = np.random.default_rng(seed)
        self.n_classes = n_classes
        self.latency_s = latency_s

    def __call__(self, request: DecodeRequest) -> int:
        u, offset = self.rng.random(), self.rng.integers(1, self.n_classes)
        return request.pad_type if u < self.p_correct else int((request.pad_type + offset) % self.n_classes)


class WrongDecoder:
    """Always answers the next pad type: every command is wrong."""

    latency_s = 0.0

    def __init__(self, n_classes: int = N_PAD_TYPES):
        self.n_classes = n_classes

    def __call__(self, request: DecodeRequest) -> int:
        return (request.pad_type + 1) % self.n_classes


class ModelDecoder:
    def __init__(self, params, latency_s: float = 0.0):
        from .network import predict_label
        self._predict = predict_label
        self.params = params
        self.latency_s = latency_s

    def __call__(self, request: DecodeRequest) -> int:
        if request.tensor is None:
            raise ValueError("ModelDecoder needs an EEG feed")
        return self._predict(self.params, request.tensor)


# --- closed-loop EEG feed -------------------------------------------------

class EEGFeed:
    """Synthetic pilot -> acquisition filters -> 1.2 s ring -> ICA correction -> tensor.

    Pad type ``k`` drives task ``k`` of ``config``.
    """

    def __init__(self, config: SignatureConfig, seed: int, grid: ElectrodeGrid,
                 correction: np.ndarray | None = None, filters: Sequence[FilterSpec] = ACQUISITION_CHAIN):
        self.pilot = PilotSource(config, seed)
        self.chain = FilterChain(filters, len(CHANNEL_NAMES))
        self.ring = ChunkRing(len(CHANNEL_NAMES), CHUNK_SAMPLES)
        self.projector = Projector(grid)
        self.correction = correction
        self.cursor = 0

    def push(self, pad_types_per_sample: np.ndarray) -> None:
        raw = self.pilot.render(self.cursor, pad_types_per_sample)
        self.cursor += len(pad_types_per_sample)
        self.ring.extend(self.chain.process(raw))

    def tensor(self) -> np.ndarray:
        if not self.ring.full:
            raise RuntimeError("feed holds less than one chunk")
        return chunk_tensor(self.ring.view()[:EOG_INDEX], self.projector, self.correction)


# --- races ----------------------------------------------------------------

@dataclass
class CommandEvent:
    """One decode.

    ``chunk_start_time_s`` is the tick at which the chunk is cut from the
    stream and handed to the decoder; the EEG window is the 1.2 s before
    it. ``issue_time_s`` is when the command reaches the game.
    """

    chunk_start_time_s: float
    issue_time_s: float
    chunk_start_pad: int
    chunk_start_type: int
    avatar_pad_at_issue: int
    avatar_type_at_issue: int
    predicted_label: int | None
    applied: bool
    late: bool = False
    decode_wall_s: float = 0.0


def accuracies(events: Sequence[CommandEvent]) -> tuple[float, float]:
    """(acc1, acc2): agreement with the pad at the tick and at command issue."""
    if not events:
        raise ValueError("no events")
    acc1 = sum(e.predicted_label == e.chunk_start_type for e in events) / len(events)
    acc2 = sum(e.predicted_label == e.avatar_type_at_issue for e in events) / len(events)
    return acc1, acc2


@dataclass
class RaceResult:
    completion_time_s: float
    acc1: float
    acc2: float
    events: list[CommandEvent]
    track: Track
    speed_model: SpeedModel
    examples: Dataset | None = None
    decode_wall_max_s: float = 0.0
    decode_wall_mean_s: float = 0.0
    trajectory: list[tuple[float, int]] = field(default_factory=list)

    @property
    def n_late(self) -> int:
        return sum(e.late for e in self.events)


class RaceTimeout(RuntimeError):
    pass


def run_race(track: Track, decoder: Callable[[DecodeRequest], int | None], speed_model: SpeedModel = SpeedModel(),
             feed: EEGFeed | None = None, cadence_s: float = CADENCE_S, budget_s: float = DECODE_BUDGET_S,
             reaction_delay_s: float = 0.0, max_time_s: float = 1800.0, time_offset_s: float = 0.0,
             task_names: Sequence[str] = ()) -> RaceResult:
    """Simulate one closed-loop race.

    With a ``feed`` the pilot's EEG class follows the avatar's pad (shifted
    by ``reaction_delay_s``), the decoder sees real tensors, and every
    decoded chunk is returned as a game-origin example labelled by the pad
    at its tick.
    """
    fs = SAMPLE_RATE_HZ
    hop = int(round(cadence_s * fs))
    state = AvatarState()
    crossings: list[tuple[float, int]] = [(-math.inf, 0)]
    cross_times = [-math.inf]
    pad_types = np.array(track.pad_types)

    def pad_at(t: float) -> int:
        return crossings[bisect.bisect_right(cross_times, t) - 1][1]

    def record_crossings(new):
        for c in new:
            crossings.append(c)
            cross_times.append(c[0])

    if feed is not None:
        feed.push(np.full(CHUNK_SAMPLES, pad_types[0]))

    events: list[CommandEvent] = []
    pending: list[tuple[float, int]] = []
    tensors, labels, stamps = [], [], []
    walls = []
    k = 0
    while not state.finished:
        t = k * cadence_s
        if t > max_time_s:
            raise RaceTimeout(f"race not finished after {max_time_s} s")
        w0 = time.perf_counter()
        tensor = feed.tensor() if feed is not None else None
        req = DecodeRequest(t, tensor, int(pad_types[state.pad_index]), state.pad_index)
        label = decoder(req)
        wall = time.perf_counter() - w0
        walls.append(wall)
        late = wall > budget_s
        issue = t + getattr(decoder, "latency_s", 0.0) + (wall if late else 0.0)
        events.append(CommandEvent(t, issue, state.pad_index, req.pad_type, -1, -1,
                                   None if label is None else int(label), False, late, wall))
        heapq.heappush(pending, (issue, len(events) - 1))
        if tensor is not None:
            tensors.append(tensor.astype(np.float32))
            labels.append(req.pad_type)
            stamps.append(time_offset_s + t)

        t_next = (k + 1) * cadence_s
        while pending and pending[0][0] < t_next and not state.finished:
            issue, idx = heapq.heappop(pending)
            new = []
            state = _integrate(state, issue - state.time_s, track, speed_model, new)
            record_crossings(new)
            if state.finished:
                heapq.heappush(pending, (issue, idx))
                break
            ev = events[idx]
            ev.avatar_pad_at_issue = state.pad_index
            ev.avatar_type_at_issue = int(pad_types[state.pad_index])
            if ev.predicted_label is not None:
                state = step(state, ev.predicted_label, speed_model, 0.0, track)
            ev.applied = True
        if not state.finished:
            new = []
            state = _integrate(state, t_next - state.time_s, track, speed_model, new)
            record_crossings(new)
        if feed is not None and not state.finished:
            sample_times = (k * hop + np.arange(hop)) / fs - reaction_delay_s
            feed.push(pad_types[[pad_at(s) for s in sample_times]])
        k += 1

    for _, idx in pending:
        ev = events[idx]
        ev.avatar_pad_at_issue = state.pad_index
        ev.avatar_type_at_issue = int(pad_types[state.pad_index])
    acc1, acc2 = accuracies(events)
    examples = None
    if tensors:
        examples = Dataset(np.stack(tensors), labels, stamps, np.full(len(labels), ORIGIN_GAME), task_names)
    return RaceResult(state.finish_time_s, acc1, acc2, events, track, speed_model, examples,
                      float(max(walls)), float(np.mean(walls)), crossings[1:])


def race_time(track: Track, speed_model: SpeedModel, decoder=None, cadence_s: float = CADENCE_S) -> float:
    return run_race(track, decoder or OracleDecoder(), speed_model, cadence_s=cadence_s).completion_time_s


def calibrate_speed_model(track: Track, target_s: float = 60.0, base: SpeedModel = SpeedModel(),
                          decoder_factory: Callable[[], Callable] = OracleDecoder) -> SpeedModel:
    """Solve for ``v_correct`` so that a perfect decoder finishes in ``target_s``."""
    def gap(v):
        return race_time(track, replace(base, v_correct=v), decoder_factory()) - target_s
    lo = base.v_none * (1 + 1e-6)
    hi = 10.0 * track.length_m / target_s
    if gap(lo) < 0:
        raise ValueError(f"target {target_s} s unreachable even at v_correct ~ v_none")
    return replace(base, v_correct=brentq(gap, lo, hi, xtol=1e-10))


# --- logs -----------------------------------------------------------------

def _fmt(x: float) -> str:
    return f"{x:.6f}"


def write_race_log(result: RaceResult, path: str | Path) -> None:
    sm = result.speed_model
    lines = [f"# track_seed={result.track.seed} v_correct={sm.v_correct!r} v_none={sm.v_none!r} "
             f"v_wrong={sm.v_wrong!r} effect_s={sm.command_effect_duration_s!r}"]
    for e in result.events:
        pred = "" if e.predicted_label is None else str(e.predicted_label)
        lines.append(f"{_fmt(e.chunk_start_time_s)},{_fmt(e.issue_time_s)},{e.chunk_start_type},"
                     f"{e.avatar_type_at_issue},{pred},{int(e.applied)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_race_log(path: str | Path) -> tuple[dict[str, str], list[CommandEvent]]:
    lines = Path(path).read_text("utf-8").splitlines()
    if not lines or not lines[0].startswith("#"):
        raise ValueError("race log lacks its header line")
    header = dict(item.split("=", 1) for item in lines[0][1:].split())
    events = []
    for line in lines[1:]:
        if not line:
            continue
        cs, iss, sp, ip, pred, applied = line.split(",")
        events.append(CommandEvent(float(cs), float(iss), -1, int(sp), -1, int(ip),
                                   None if pred == "" else int(pred), applied == "1"))
    return header, events


def write_race_summary(results: Sequence[RaceResult], path: str | Path, first_id: int = 1) -> None:
    lines = ["race_id,time_s,acc1,acc2"]
    for i, r in enumerate(results, first_id):
        lines.append(f"{i},{_fmt(r.completion_time_s)},{_fmt(r.acc1)},{_fmt(r.acc2)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
