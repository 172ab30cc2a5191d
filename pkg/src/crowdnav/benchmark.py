"""Paired benchmark runs, results tables and predictor evaluation."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import (
    CrowdConfig,
    DataError,
    GridSpec,
    SceneSpec,
    TrajectoryStore,
    filter_min_length,
    load_trajectories,
    synth_crowd,
)
from .policy.checkpoint import Checkpoint
from .policy.train import PolicyController
from .prediction import (
    BaselinePredictor,
    ExternalPredictor,
    ForestParams,
    ForestPredictor,
    PerfectPredictor,
    RegressionForest,
    build_samples,
    fit_forest,
    load_external_forecast,
    nmse,
    split_by_trajectory,
)
from .simulator import Controller, CrowdSimulator, Episode, EpisodeResult, DStarController, write_event_log

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# controller specs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ControllerSpec:
    """Parsed form of ``dstar+baseline[:r]``, ``dstar+forest:PATH``,
    ``dstar+external:PATH``, ``dstar+perfect`` or ``policy:PATH``."""

    kind: str  # dstar | policy
    predictor: str | None = None  # baseline | forest | external | perfect
    radius: int = 1
    path: str | None = None

    @classmethod
    def parse(cls, text: str) -> "ControllerSpec":
        head, _, arg = text.strip().partition(":")
        if head in ("policy", "policy+checkpoint"):
            if not arg:
                raise ValueError("policy controller needs a checkpoint path: policy:PATH")
            return cls("policy", path=arg)
        if not head.startswith("dstar+"):
            raise ValueError(f"unknown controller spec {text!r}")
        pred = head[len("dstar+"):]
        if pred == "baseline":
            try:
                radius = int(arg) if arg else 1
            except ValueError:
                raise ValueError(f"baseline radius must be an integer, got {arg!r}") from None
            if radius < 0:
                raise ValueError("baseline radius must be >= 0")
            return cls("dstar", "baseline", radius)
        if pred == "perfect":
            if arg:
                raise ValueError("dstar+perfect takes no argument")
            return cls("dstar", "perfect")
        if pred in ("forest", "external"):
            if not arg:
                raise ValueError(f"dstar+{pred} needs a model path: dstar+{pred}:PATH")
            return cls("dstar", pred, path=arg)
        raise ValueError(f"unknown predictor {pred!r} in {text!r}")

    def __str__(self) -> str:
        if self.kind == "policy":
            return f"policy:{self.path}"
        if self.predictor == "baseline":
            return f"dstar+baseline:{self.radius}"
        if self.path:
            return f"dstar+{self.predictor}:{self.path}"
        return f"dstar+{self.predictor}"


class ControllerFactory:
    """Loads a controller's model files once, then builds fresh controllers.

    Loading happens in the constructor so a missing or corrupt file fails
    before any episode runs.
    """

    def __init__(self, spec: ControllerSpec, store: TrajectoryStore, grid: GridSpec):
        self.spec = spec
        self.store = store
        self.grid = grid
        self.model = None
        if spec.path is not None and not Path(spec.path).is_file():
            raise FileNotFoundError(f"model file not found: {spec.path}")
        if spec.predictor == "forest":
            self.model = RegressionForest.load(spec.path)
        elif spec.predictor == "external":
            self.model = load_external_forecast(spec.path)
        elif spec.kind == "policy":
            self.model = Checkpoint.load(spec.path)

    @property
    def reward_spec(self):
        return self.model.reward if self.spec.kind == "policy" else None

    def build(self) -> Controller:
        spec, store, grid = self.spec, self.store, self.grid
        if spec.kind == "policy":
            return PolicyController(self.model.network, mode="greedy", name=str(spec))
        if spec.predictor == "baseline":
            predictor = BaselinePredictor(store, grid, spec.radius)
        elif spec.predictor == "perfect":
            predictor = PerfectPredictor(store, grid)
        elif spec.predictor == "forest":
            predictor = ForestPredictor(store, grid, self.model)
        else:
            predictor = ExternalPredictor(store, grid, self.model)
        controller = DStarController(predictor)
        controller.name = str(spec)
        return controller


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class BenchmarkConfig:
    """One controller over a seeded episode list drawn from a recording.

    Exactly one of ``store`` (trajectory file) and ``crowd`` (synthetic
    crowd settings) names the recording.
    """

    controller: str
    episodes: int = 1000
    seed: int = 0
    store: str | None = None
    crowd: CrowdConfig | None = None
    cols: int = 64
    rows: int = 36
    out: str | None = None
    workers: int = 1

    def __post_init__(self):
        if self.episodes < 1:
            raise ValueError("episode count must be >= 1")
        if (self.store is None) == (self.crowd is None):
            raise ValueError("give exactly one of a store path or a crowd config")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        ControllerSpec.parse(self.controller)

    def recording_dict(self) -> dict:
        """The parts that fix the recording, grid and episode list."""
        return {
            "store": _file_digest(self.store) if self.store else None,
            "crowd": asdict(self.crowd) if self.crowd else None,
            "cols": self.cols,
            "rows": self.rows,
            "episodes": self.episodes,
            "seed": self.seed,
        }

    def config_hash(self) -> str:
        return _digest(json.dumps(self.recording_dict(), sort_keys=True))


def _digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def _file_digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:16]


def episode_list_hash(episodes: list[Episode]) -> str:
    return _digest(json.dumps([asdict(e) for e in episodes]))


def load_recording(config: BenchmarkConfig) -> TrajectoryStore:
    if config.store:
        return load_trajectories(config.store)
    return synth_crowd(config.crowd, scene=SceneSpec())


# ---------------------------------------------------------------------------
# results tables
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ResultRow:
    controller: str
    episodes: int
    reached: int
    failures: int
    mean_delay: float | None  # percent, over episodes that reached the goal
    sr: int
    sp: int
    mrp: int
    stall_ticks: int

    @classmethod
    def from_results(cls, controller: str, results: list[EpisodeResult]) -> "ResultRow":
        delays = [r.delay for r in results if r.reached_goal]
        return cls(
            controller=controller,
            episodes=len(results),
            reached=sum(r.reached_goal for r in results),
            failures=sum(r.failed for r in results),
            mean_delay=math.fsum(delays) / len(delays) if delays else None,
            sr=sum(r.sr for r in results),
            sp=sum(r.sp for r in results),
            mrp=sum(r.mrp for r in results),
            stall_ticks=sum(r.stall_ticks for r in results),
        )


ROW_FIELDS = tuple(f.name for f in fields(ResultRow))


@dataclass
class ResultsTable:
    rows: list[ResultRow] = field(default_factory=list)
    metadata: dict[str, str] = field(default_factory=dict)

    def row(self, controller: str) -> ResultRow:
        for r in self.rows:
            if r.controller == controller:
                return r
        raise KeyError(controller)

    def merge(self, other: "ResultsTable") -> "ResultsTable":
        """Rows of both tables; metadata must agree on every shared key."""
        for k in set(self.metadata) & set(other.metadata):
            if self.metadata[k] != other.metadata[k]:
                raise ValueError(f"cannot merge tables whose {k!r} differs")
        return ResultsTable(self.rows + other.rows, {**self.metadata, **other.metadata})

    # -- csv ----------------------------------------------------------------

    def to_csv(self) -> str:
        buf = io.StringIO()
        for k in sorted(self.metadata):
            buf.write(f"# {k}={self.metadata[k]}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(ROW_FIELDS)
        for r in self.rows:
            w.writerow(["" if (v := getattr(r, f)) is None else repr(v) if isinstance(v, float) else v
                        for f in ROW_FIELDS])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ResultsTable":
        meta: dict[str, str] = {}
        body = []
        for line in text.splitlines():
            if line.startswith("# "):
                key, sep, value = line[2:].partition("=")
                if not sep:
                    raise DataError(f"bad metadata line {line!r}")
                meta[key] = value
            elif line:
                body.append(line)
        reader = csv.DictReader(body)
        if tuple(reader.fieldnames or ()) != ROW_FIELDS:
            raise DataError(f"results header must be {','.join(ROW_FIELDS)}")
        rows = []
        for rec in reader:
            rows.append(ResultRow(
                controller=rec["controller"],
                mean_delay=float(rec["mean_delay"]) if rec["mean_delay"] else None,
                **{f: int(rec[f]) for f in ROW_FIELDS if f not in ("controller", "mean_delay")},
            ))
        return cls(rows, meta)

    # -- markdown -------------------------------------------------------------

    def to_markdown(self) -> str:
        head = ["controller", "delay %", "SR", "SP", "MRP", "reached", "episodes", "failures", "stall ticks"]
        lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
        for r in self.rows:
            delay = "n/a" if r.mean_delay is None else f"{r.mean_delay:.2f}"
            cells = [r.controller, delay, r.sr, r.sp, r.mrp, r.reached, r.episodes, r.failures, r.stall_ticks]
            lines.append("| " + " | ".join(str(c) for c in cells) + " |")
        meta = [f"- {k}: {self.metadata[k]}" for k in sorted(self.metadata)]
        return "\n".join(lines + ([""] + meta if meta else [])) + "\n"


def export_results(table: ResultsTable, path: str | Path, fmt: str = "csv") -> Path:
    path = Path(path)
    if fmt == "csv":
        text = table.to_csv()
    elif fmt == "markdown":
        text = table.to_markdown()
    else:
        raise ValueError(f"unknown format {fmt!r}; expected csv or markdown")
    path.write_text(text, encoding="utf-8")
    return path


def read_results(path: str | Path) -> ResultsTable:
    return ResultsTable.from_csv(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# running
# ---------------------------------------------------------------------------

_WORKER: dict = {}


def _worker_init(spec_text, store, grid):
    sim = CrowdSimulator(store, grid)
    _WORKER["sim"] = sim
    _WORKER["factory"] = ControllerFactory(ControllerSpec.parse(spec_text), store, grid)


def _worker_run(episodes: list[Episode]) -> list[EpisodeResult]:
    sim, factory = _WORKER["sim"], _WORKER["factory"]
    controller = factory.build()
    return [sim.run_episode(controller, ep) for ep in episodes]


def run_episodes(spec_text: str, store: TrajectoryStore, grid: GridSpec,
                 episodes: list[Episode], workers: int = 1,
                 factory: ControllerFactory | None = None) -> list[EpisodeResult]:
    """Results in episode order, identical for any worker count."""
    if workers <= 1 or len(episodes) < 2:
        factory = factory or ControllerFactory(ControllerSpec.parse(spec_text), store, grid)
        sim = CrowdSimulator(store, grid)
        controller = factory.build()
        return [sim.run_episode(controller, ep) for ep in episodes]
    chunks = [episodes[i::workers] for i in range(workers)]
    with ProcessPoolExecutor(workers, initializer=_worker_init, initargs=(spec_text, store, grid)) as pool:
        parts = list(pool.map(_worker_run, chunks))
    out: list[EpisodeResult | None] = [None] * len(episodes)
    for i, part in enumerate(parts):
        out[i::workers] = part
    return out  # type: ignore[return-value]


def run_benchmark(config: BenchmarkConfig, store: TrajectoryStore | None = None) -> ResultsTable:
    """Run one controller over the config's episode list.

    Every model file is loaded before the first episode. With ``config.out``
    set, per-episode logs go to ``out/logs/<controller>/`` and the table to
    ``out/results.csv`` and ``out/results.md``.
    """
    spec = ControllerSpec.parse(config.controller)
    store = store if store is not None else load_recording(config)
    grid = GridSpec(store.scene, config.cols, config.rows)
    factory = ControllerFactory(spec, store, grid)
    episodes = CrowdSimulator(store, grid).make_episodes(config.episodes, config.seed)
    results = run_episodes(config.controller, store, grid, episodes, config.workers, factory)
    name = str(spec)
    meta = {
        "seed": str(config.seed),
        "config_hash": config.config_hash(),
        "episode_hash": episode_list_hash(episodes),
        "version": __version__,
    }
    if factory.reward_spec is not None:
        meta[f"reward[{name}]"] = json.dumps(asdict(factory.reward_spec), sort_keys=True)
    table = ResultsTable([ResultRow.from_results(name, results)], meta)
    if config.out:
        write_logs(results, Path(config.out) / "logs" / log_dir_name(name), name)
    return table


def run_benchmarks(configs: list[BenchmarkConfig]) -> ResultsTable:
    """Several controllers on one shared recording and episode list."""
    if not configs:
        raise ValueError("no benchmark configs")
    base = configs[0].recording_dict()
    if any(c.recording_dict() != base for c in configs[1:]):
        raise ValueError("paired benchmarks must share recording, grid, episode count and seed")
    store = load_recording(configs[0])
    grid = GridSpec(store.scene, configs[0].cols, configs[0].rows)
    for c in configs:  # fail on any missing model before running anything
        ControllerFactory(ControllerSpec.parse(c.controller), store, grid)
    table = ResultsTable()
    for c in configs:
        table = table.merge(run_benchmark(c, store))
    out = configs[0].out
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        export_results(table, Path(out) / "results.csv", "csv")
        export_results(table, Path(out) / "results.md", "markdown")
    return table


def log_dir_name(controller: str) -> str:
    safe = "".join(ch if ch.isalnum() or ch in "+-." else "_" for ch in controller)
    return safe.strip("_") or "controller"


def write_logs(results: list[EpisodeResult], directory: Path, controller: str) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for i, r in enumerate(results):
        write_event_log(r, directory / f"episode_{i:05d}.csv", controller)


def default_workers() -> int:
    return os.cpu_count() or 1


# ---------------------------------------------------------------------------
# predictor evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NMSEReport:
    model: str
    train: float
    validation: float
    test: float
    trajectories: tuple[int, int, int]
    windows: tuple[int, int, int]


def eval_predictor(model: str, store: TrajectoryStore, seed: int = 0,
                   params: ForestParams | None = None) -> NMSEReport:
    """NMSE of a point predictor on a seeded 80/10/10 split by trajectory.

    ``model`` is ``persistence``, ``oracle``, ``forest`` (fitted on the
    training split) or ``forest:PATH`` (a saved model).
    """
    usable = filter_min_length(store, 10)
    if len(usable) < 10:
        raise DataError(f"need at least 10 trajectories of length >= 10, found {len(usable)}")
    splits = split_by_trajectory([t.pedestrian_id for t in usable], seed)
    samples = [build_samples(usable[i] for i in ids) for ids in splits]
    if any(len(s[0]) == 0 for s in samples):
        raise DataError("every split needs at least one 10-point window")
    kind, _, path = model.partition(":")
    if kind == "forest":
        if path:
            forest = RegressionForest.load(path)
        else:
            forest = fit_forest(samples[0][1], samples[0][2], params or ForestParams(), seed)
        predict = lambda inputs, feats: forest.predict(feats)  # noqa: E731
    elif kind == "persistence" and not path:
        predict = lambda inputs, feats: np.zeros((len(inputs), 10))  # noqa: E731
    elif kind == "oracle" and not path:
        predict = None
    else:
        raise ValueError(f"unknown predictor model {model!r}")
    scores = []
    for inputs, feats, targets in samples:
        origin = np.repeat(inputs[:, -1:, :], 5, axis=1)
        truth = origin + targets.reshape(-1, 5, 2)
        disp = targets if predict is None else predict(inputs, feats)
        scores.append(nmse(origin + np.asarray(disp).reshape(-1, 5, 2), truth, store.scene))
    return NMSEReport(model, *scores, tuple(len(s) for s in splits), tuple(len(s[0]) for s in samples))

