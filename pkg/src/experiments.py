"""Experiment 1: stimulus generation, model predictions per job, correlation with judgment data."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import pearsonr

from src.gridworld import GridMap, State, distances_to
from src.inference import MODELS, GibbsConfig, PosteriorTable, derive_seed, infer
from src.likelihood import Path, SubgoalSequence
from src.planner import PlannerConfig, generate_path, shortest_length

PATH_STYLES = ("no_detour", "detour", "mixed")
CATEGORIES = ("1", "2", "3", "1+1", "2+2", "3+3", "1+3")


@dataclass(frozen=True)
class JobSpec:
    job_id: str
    dest: str
    lists: Tuple[SubgoalSequence, ...]
    path_style: str = "detour"
    n_paths: int = 8

    def __post_init__(self):
        if len(self.lists) not in (1, 2):
            raise ValueError(f"{self.job_id}: a job has one or two item lists, got {len(self.lists)}")
        if self.path_style not in PATH_STYLES:
            raise ValueError(f"{self.job_id}: unknown path style {self.path_style!r}")
        for g in self.lists:
            if g.dest != self.dest or not 1 <= len(g.items) <= 3:
                raise ValueError(f"{self.job_id}: bad item list {g}")

    @property
    def category(self) -> str:
        return "+".join(str(n) for n in sorted(len(g.items) for g in self.lists))

    def to_json(self) -> Dict[str, object]:
        return {"job_id": self.job_id, "dest": self.dest, "lists": [list(g.items) for g in self.lists],
                "path_style": self.path_style, "n_paths": self.n_paths}


@dataclass
class Stimulus:
    job: JobSpec
    paths: List[Path]
    lists_used: List[SubgoalSequence] = field(default_factory=list)

    def to_json(self) -> Dict[str, object]:
        out = self.job.to_json()
        out["paths"] = [[[s.x, s.y] for s in p] for p in self.paths]
        return out


@dataclass
class JudgmentTable:
    rows: List[Tuple[str, SubgoalSequence, float]] = field(default_factory=list)

    def __post_init__(self):
        for job_id, g, p in self.rows:
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{job_id} {g}: proportion {p} outside [0, 1]")


def split_starts(grid: GridMap, g: SubgoalSequence) -> Tuple[List[State], List[State]]:
    """Starts for which the list lies on some shortest route to the destination, and the rest."""
    direct = distances_to(grid, grid.destination_cell(g.dest))
    on_route, detour = [], []
    for start in grid.starts:
        if start not in direct:
            continue
        try:
            via = shortest_length(grid, start, g.goals(grid))
        except ValueError:
            continue
        (on_route if via == direct[start] else detour).append(start)
    return on_route, detour


def _style_for(job: JobSpec, i: int) -> str:
    if job.path_style == "mixed":
        return "no_detour" if i % 2 == 0 else "detour"
    return job.path_style


def generate_job_paths(grid: GridMap, job: JobSpec, rng: np.random.Generator,
                       addons: bool = True, mode: str = "optimal", beta: float = 6.0) -> Stimulus:
    cfg = PlannerConfig(beta=beta, mode=mode, addons=addons)
    pools = {g: split_starts(grid, g) for g in job.lists}
    paths, used = [], []
    for i in range(job.n_paths):
        g = job.lists[int(rng.integers(len(job.lists)))]
        on_route, detour = pools[g]
        pool = on_route if _style_for(job, i) == "no_detour" else detour
        # lists that cannot be realised in the requested style use every start
        pool = pool or on_route + detour
        if not pool:
            raise ValueError(f"{job.job_id}: list {g} is unreachable from every start")
        start = pool[int(rng.integers(len(pool)))]
        paths.append(generate_path(grid, g.items, job.dest, start, cfg, rng))
        used.append(g)
    return Stimulus(job, paths, used)


def generate_exp1_stimuli(grid: GridMap, seed, jobs: Sequence[JobSpec], addons: bool = True,
                          mode: str = "optimal", n_paths: Optional[int] = None, beta: float = 6.0) -> List[Stimulus]:
    """One Stimulus per job, each drawn from its own stream [seed, job index]; n_paths overrides every job's count."""
    if n_paths is not None:
        if n_paths < 1:
            raise ValueError(f"paths per job must be >= 1, got {n_paths}")
        jobs = [replace(job, n_paths=n_paths) for job in jobs]
    return [generate_job_paths(grid, job, np.random.default_rng(derive_seed(seed, j)), addons, mode, beta)
            for j, job in enumerate(jobs)]


def taxonomy(jobs: Sequence[JobSpec]) -> Dict[str, Counter]:
    """Jobs per category, split by path style."""
    out: Dict[str, Counter] = {c: Counter() for c in CATEGORIES}
    for job in jobs:
        if job.category not in out:
            raise ValueError(f"{job.job_id}: category {job.category} is outside the stimulus taxonomy")
        out[job.category][job.path_style] += 1
    return out


@dataclass
class Prediction:
    job_id: str
    model: str
    items: str
    dest: str
    probability: float

    @property
    def key(self) -> Tuple[str, str, str]:
        return self.job_id, self.items, self.dest


def run_exp1(grid: GridMap, stimuli: Sequence[Stimulus], models: Sequence[str] = MODELS,
             cfg: GibbsConfig = GibbsConfig(), log: Optional[Callable[[str], None]] = None
             ) -> Tuple[List[Prediction], Dict[Tuple[str, str], PosteriorTable]]:
    predictions, tables = [], {}
    for j, stim in enumerate(stimuli):
        job_cfg = cfg.reseeded(derive_seed(cfg.seed, j))
        for model in models:
            table = infer(model, grid, stim.paths, stim.job.dest, job_cfg)
            tables[(stim.job.job_id, model)] = table
            for g, p in table.top(len(table.entries)):
                predictions.append(Prediction(stim.job.job_id, model, ",".join(map(str, g.items)), g.dest, p))
        if log:
            top = tables.get((stim.job.job_id, "crp"))
            best = f", crp top {top.top(1)[0][0]}" if top and top.entries else ""
            log(f"{stim.job.job_id} done{best}")
    return predictions, tables


def correlate(predictions: Sequence[Prediction], judgments: JudgmentTable, model: Optional[str] = None) -> float:
    """Pearson r over judged (job, sequence) pairs; sequences a model never produced count as 0."""
    if model is not None:
        predictions = [p for p in predictions if p.model == model]
    by_key = {p.key: p.probability for p in predictions}
    jobs = {p.job_id for p in predictions}
    xs, ys = [], []
    for job_id, g, proportion in judgments.rows:
        if job_id not in jobs:
            continue
        xs.append(by_key.get((job_id, ",".join(map(str, g.items)), g.dest), 0.0))
        ys.append(proportion)
    if len(xs) < 2:
        raise ValueError("need at least two aligned (job, sequence) pairs to correlate")
    r, _ = pearsonr(xs, ys)
    return float(r)
