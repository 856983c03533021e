"""Worker-Helper simulation: target/destination marginals, the collaboration protocol and its evaluation."""
from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from src.gridworld import DESTINATION_IDS, GridMap, State, distances_to, transition
from src.inference import GibbsConfig, PosteriorTable, derive_seed, infer
from src.likelihood import PrefixTracker, SubgoalSequence
from src.planner import GOAL_REWARD, STEP_COST, PlannerConfig, generate_path, next_action

SOURCES = ("crp", "independent", "logical", "copy", "ground_truth", "none")
SETTINGS = (1, 2, 3)
TRIALS_PER_START = 9
# stream tag separating trial draws from training draws
_TRIAL_STREAM = 104729


@dataclass(frozen=True)
class SubgoalStructure:
    lists: Dict[str, Tuple[SubgoalSequence, ...]]

    def validate(self, grid: GridMap) -> None:
        for dest, seqs in self.lists.items():
            if not seqs:
                raise ValueError(f"destination {dest} has no item lists")
            for g in seqs:
                if g.dest != dest:
                    raise ValueError(f"list {g} filed under destination {dest}")
                g.validate(grid)

    @property
    def key(self) -> str:
        return ";".join(f"{d}:" + "/".join(",".join(map(str, g.items)) for g in self.lists[d])
                        for d in sorted(self.lists))


@dataclass(frozen=True)
class HelperConfig:
    """The Helper commits to the best row-3 item once its marginal p satisfies p >= threshold.

    The comparison is inclusive: a threshold equal to the prior mass of an item commits
    before any step is observed.
    """

    threshold: float = 0.5
    beta_helper: float = 2.0
    posterior_source: str = "crp"

    def __post_init__(self):
        if not 0 < self.threshold <= 1:
            raise ValueError(f"threshold must be in (0, 1], got {self.threshold}")
        if self.beta_helper <= 0:
            raise ValueError(f"beta_helper must be > 0, got {self.beta_helper}")
        if self.posterior_source not in SOURCES:
            raise ValueError(f"posterior_source must be one of {SOURCES}, got {self.posterior_source!r}")


@dataclass
class TargetMarginal:
    """decision: row-3 item (None = no row-3 item) and sums to one; inclusion: per-item marginal."""

    decision: Dict[Optional[int], float]
    inclusion: Dict[int, float]

    def best(self) -> Tuple[Optional[int], float]:
        items = [(i, p) for i, p in self.decision.items() if i is not None]
        if not items:
            return None, 0.0
        return max(items, key=lambda kv: (kv[1], -kv[0]))


@dataclass
class TrialResult:
    worker_steps: int
    score: float
    helper_target: Optional[int]
    target_correct: bool
    destination_correct: bool
    decision_time: Optional[int]
    helper_dest: Optional[str] = None
    worker_path: Tuple[State, ...] = ()
    helper_path: Tuple[State, ...] = ()
    events: List[Dict[str, object]] = field(default_factory=list)


def structure_posteriors(structure: SubgoalStructure) -> Dict[str, PosteriorTable]:
    return {d: PosteriorTable(d, "ground_truth", {g: 1.0 for g in seqs}) for d, seqs in structure.lists.items()}


def hypotheses(posteriors: Dict[str, PosteriorTable]) -> Tuple[List[SubgoalSequence], np.ndarray]:
    hyps, weights = [], []
    for dest in sorted(posteriors):
        for g, p in posteriors[dest].support():
            hyps.append(g)
            weights.append(p)
    return hyps, np.array(weights, dtype=float)


def _normalised_mass(weights: np.ndarray, loglik: np.ndarray) -> np.ndarray:
    if not len(weights) or not np.any(weights > 0):
        return np.zeros(len(weights))
    with np.errstate(divide="ignore"):
        logm = np.log(weights) + loglik
    total = logsumexp(logm)
    if not np.isfinite(total):
        # zero mass: fall back on the uninformed prior mixture
        return weights / weights.sum()
    return np.exp(logm - total)


def _target_from_mass(grid: GridMap, hyps: Sequence[SubgoalSequence], mass: np.ndarray) -> TargetMarginal:
    last_row = set(grid.last_row_items())
    decision: Dict[Optional[int], float] = {i: 0.0 for i in sorted(last_row)}
    decision[None] = 0.0
    inclusion = {i: 0.0 for i, _ in grid.items}
    for g, m in zip(hyps, mass):
        target = next((i for i in g.items if i in last_row), None)
        decision[target] += m
        for i in g.items:
            inclusion[i] += m
    if not np.any(mass > 0):
        decision[None] = 1.0
    return TargetMarginal(decision, inclusion)


def _destination_from_mass(hyps: Sequence[SubgoalSequence], mass: np.ndarray) -> Dict[str, float]:
    out = {d: 0.0 for d in DESTINATION_IDS}
    for g, m in zip(hyps, mass):
        out[g.dest] += m
    total = sum(out.values())
    if total <= 0:
        return {d: 1.0 / len(out) for d in out}
    return {d: p / total for d, p in out.items()}


def _prefix_loglik(grid: GridMap, prefix: Sequence[State], hyps: Sequence[SubgoalSequence], beta: float) -> np.ndarray:
    tracker = PrefixTracker(grid, hyps, beta, prefix[0])
    for s in prefix[1:]:
        tracker.extend(s)
    return tracker.log_likelihood


def target_item_marginal(grid: GridMap, prefix: Sequence[State], posteriors: Dict[str, PosteriorTable],
                         beta_helper: float) -> TargetMarginal:
    hyps, weights = hypotheses(posteriors)
    mass = _normalised_mass(weights, _prefix_loglik(grid, prefix, hyps, beta_helper))
    return _target_from_mass(grid, hyps, mass)


def destination_marginal(grid: GridMap, prefix: Sequence[State], posteriors: Dict[str, PosteriorTable],
                         beta_helper: float) -> Dict[str, float]:
    hyps, weights = hypotheses(posteriors)
    mass = _normalised_mass(weights, _prefix_loglik(grid, prefix, hyps, beta_helper))
    return _destination_from_mass(hyps, mass)


def run_trial(grid: GridMap, structure: SubgoalStructure, posteriors: Dict[str, PosteriorTable],
              worker_start: State, worker_dest: str, worker_list: SubgoalSequence, cfg: HelperConfig,
              seed) -> TrialResult:
    if worker_list not in structure.lists.get(worker_dest, ()):
        raise ValueError(f"list {worker_list} is not a job of destination {worker_dest}")
    rng = np.random.default_rng(seed)
    worker_cfg = PlannerConfig(mode="optimal")
    last_row = grid.last_row_items()

    source = cfg.posterior_source
    if source == "ground_truth":
        posteriors = structure_posteriors(structure)
    hyps, weights = hypotheses(posteriors) if source != "none" else ([], np.array([]))
    tracker = PrefixTracker(grid, hyps, cfg.beta_helper, worker_start)
    snapshots = [tracker.log_likelihood.copy()]

    remaining = [grid.item_cell(i) for i in worker_list.items]
    dest_cell = grid.destination_cell(worker_dest)
    here, path = worker_start, [worker_start]
    events: List[Dict[str, object]] = [_event(0, "worker", here, "start")]
    target: Optional[int] = None
    decision_time: Optional[int] = None

    def commit(item: int, t: int) -> None:
        nonlocal target, decision_time
        target, decision_time = item, t
        events.append(_event(t, "helper", grid.helper_start, "commit", item=item))
        cell = grid.item_cell(item)
        if cell in remaining:
            # the Worker re-plans on the assumption that the Helper fetches it
            remaining.remove(cell)

    def consider(t: int) -> None:
        if source == "none" or target is not None:
            return
        if source == "ground_truth":
            owned = [i for i in worker_list.items if i in last_row]
            if owned:
                commit(owned[0], t)
            return
        mass = _normalised_mass(weights, snapshots[-1])
        item, p = _target_from_mass(grid, hyps, mass).best()
        if item is not None and p >= cfg.threshold:
            commit(item, t)

    consider(0)
    while True:
        while remaining and here == remaining[0]:
            remaining.pop(0)
            events.append(_event(len(path) - 1, "worker", here, "pickup"))
        if not remaining and here == dest_cell:
            break
        goal = remaining[0] if remaining else dest_cell
        here = transition(grid, here, next_action(grid, here, goal, worker_cfg, rng))
        path.append(here)
        events.append(_event(len(path) - 1, "worker", here, "move"))
        if source != "none":
            tracker.extend(here)
            snapshots.append(tracker.log_likelihood.copy())
        consider(len(path) - 1)
    events.append(_event(len(path) - 1, "worker", here, "arrive"))

    steps = len(path) - 1
    helper_dest, helper_path = None, ()
    if target is not None and grid.helper_start is not None:
        arrival = decision_time + distances_to(grid, grid.item_cell(target))[grid.helper_start]
        mass = _normalised_mass(weights, snapshots[min(arrival, len(snapshots) - 1)])
        dest_probs = _destination_from_mass(hyps, mass)
        helper_dest = max(DESTINATION_IDS, key=lambda d: (dest_probs[d], -DESTINATION_IDS.index(d)))
        helper_path = generate_path(grid, [target], helper_dest, grid.helper_start, worker_cfg, rng)
        for k, cell in enumerate(helper_path[1:], start=1):
            events.append(_event(decision_time + k, "helper", cell, "move"))

    return TrialResult(
        worker_steps=steps,
        score=GOAL_REWARD - STEP_COST * steps,
        helper_target=target,
        target_correct=target is not None and target in worker_list.items,
        destination_correct=helper_dest == worker_dest,
        decision_time=decision_time,
        helper_dest=helper_dest,
        worker_path=tuple(path),
        helper_path=tuple(helper_path),
        events=events,
    )


def _event(t: int, agent: str, cell: Optional[State], kind: str, **extra) -> Dict[str, object]:
    event = {"t": t, "agent": agent, "x": None if cell is None else cell.x,
             "y": None if cell is None else cell.y, "event": kind}
    event.update(extra)
    return event


def enumerate_structures(grid: GridMap, setting: int) -> List[SubgoalStructure]:
    rows = grid.item_rows()
    if len(rows) < 2:
        raise ValueError("the Worker-Helper settings need at least two item rows")
    last, second = rows[-1], rows[-2]
    if setting == 1:
        options = [((i,),) for i in last]
    elif setting == 2:
        options = [((a, b),) for a in second for b in last]
    elif setting == 3:
        options = [((a,), (b,)) for a, b in itertools.combinations(last, 2)]
    else:
        raise ValueError(f"setting must be one of {SETTINGS}, got {setting}")
    out = []
    for combo in itertools.product(options, repeat=len(DESTINATION_IDS)):
        out.append(SubgoalStructure({
            d: tuple(SubgoalSequence(items, d) for items in lists) for d, lists in zip(DESTINATION_IDS, combo)
        }))
    return out


def sample_structures(grid: GridMap, setting: int, limit: Optional[int], seed) -> List[SubgoalStructure]:
    every = enumerate_structures(grid, setting)
    if limit is None or len(every) <= limit:
        return every
    rng = np.random.default_rng(derive_seed(seed, setting))
    picked = sorted(rng.choice(len(every), size=limit, replace=False))
    return [every[int(i)] for i in picked]


def training_paths(grid: GridMap, structure: SubgoalStructure, n: int, rng: np.random.Generator) -> Dict[str, list]:
    """n optimal-Worker paths per destination from random starts and uniformly drawn lists."""
    cfg = PlannerConfig(mode="optimal")
    out = {}
    for dest in DESTINATION_IDS:
        seqs = structure.lists[dest]
        paths = []
        for _ in range(n):
            start = grid.starts[int(rng.integers(len(grid.starts)))]
            g = seqs[int(rng.integers(len(seqs)))]
            paths.append(generate_path(grid, g.items, dest, start, cfg, rng))
        out[dest] = paths
    return out


def trial_plan(grid: GridMap, structure: SubgoalStructure, rng: np.random.Generator,
               per_start: int = TRIALS_PER_START) -> List[Tuple[State, str, SubgoalSequence, int]]:
    plan = []
    for start in grid.starts:
        for _ in range(per_start):
            dest = DESTINATION_IDS[int(rng.integers(len(DESTINATION_IDS)))]
            seqs = structure.lists[dest]
            plan.append((start, dest, seqs[int(rng.integers(len(seqs)))], int(rng.integers(2**31))))
    return plan


def model_posteriors(grid: GridMap, model: str, structure: SubgoalStructure, paths: Dict[str, list],
                     gibbs: GibbsConfig, seed) -> Dict[str, PosteriorTable]:
    if model == "none":
        return {}
    if model == "ground_truth":
        return structure_posteriors(structure)
    out = {}
    for k, dest in enumerate(DESTINATION_IDS):
        cfg = gibbs.reseeded(derive_seed(seed, k))
        out[dest] = infer(model, grid, paths[dest], dest, cfg)
    return out


@dataclass
class Experiment2Row:
    setting: int
    structure_id: str
    model: str
    n_observations: int
    repeat: int
    mean_score: float
    variance: float
    mean_decision_time: float
    target_accuracy: float
    dest_accuracy: float


def _summarise_trials(results: Sequence[TrialResult]) -> Tuple[float, float, float, float]:
    decided = [r.decision_time for r in results if r.decision_time is not None]
    return (
        float(np.mean([r.score for r in results])),
        float(np.mean(decided)) if decided else math.nan,
        float(np.mean([r.target_correct for r in results])),
        float(np.mean([r.destination_correct for r in results])),
    )


@dataclass
class StructureRun:
    rows: List[Experiment2Row]
    repeat_rows: List[Experiment2Row]
    episodes: List[Dict[str, object]]


def evaluate_structure(grid: GridMap, setting: int, s_idx: int, structure: SubgoalStructure,
                       n_values: Sequence[int], models: Sequence[str], repeats: int, seed,
                       helper: HelperConfig, gibbs: GibbsConfig, keep_episodes: bool = False) -> StructureRun:
    """Every (model, n) cell for one structure; trial draws are shared by all models, n and repeats."""
    plan = trial_plan(grid, structure, np.random.default_rng(derive_seed(seed, setting, s_idx, _TRIAL_STREAM)))
    rows, repeat_rows, episodes = [], [], []
    for n in n_values:
        per_model: Dict[str, List[Tuple[float, float, float, float]]] = {m: [] for m in models}
        for r in range(repeats):
            train_rng = np.random.default_rng(derive_seed(seed, setting, s_idx, n, r))
            paths = training_paths(grid, structure, n, train_rng)
            for mi, model in enumerate(models):
                posteriors = model_posteriors(grid, model, structure, paths, gibbs,
                                              derive_seed(seed, setting, s_idx, n, r, mi))
                hcfg = HelperConfig(helper.threshold, helper.beta_helper, model)
                results = []
                for t, (start, dest, g, trial_seed) in enumerate(plan):
                    result = run_trial(grid, structure, posteriors, start, dest, g, hcfg, trial_seed)
                    results.append(result)
                    if keep_episodes:
                        for event in result.events:
                            episodes.append({"setting": setting, "structure_id": structure.key, "model": model,
                                             "n_observations": n, "repeat": r, "trial": t, **event})
                summary = _summarise_trials(results)
                per_model[model].append(summary)
                repeat_rows.append(Experiment2Row(setting, structure.key, model, n, r, summary[0], 0.0, *summary[1:]))
        for model in models:
            cells = np.array(per_model[model], dtype=float)
            rows.append(Experiment2Row(
                setting=setting,
                structure_id=structure.key,
                model=model,
                n_observations=n,
                repeat=repeats,
                mean_score=float(cells[:, 0].mean()),
                variance=float(cells[:, 0].var()),
                mean_decision_time=float(np.nanmean(cells[:, 1])) if np.any(np.isfinite(cells[:, 1])) else math.nan,
                target_accuracy=float(cells[:, 2].mean()),
                dest_accuracy=float(cells[:, 3].mean()),
            ))
    return StructureRun(rows, repeat_rows, episodes)


def _evaluate_structure_job(args) -> StructureRun:
    return evaluate_structure(*args)


@dataclass
class Experiment2Report:
    rows: List[Experiment2Row] = field(default_factory=list)
    repeat_rows: List[Experiment2Row] = field(default_factory=list)
    episodes: List[Dict[str, object]] = field(default_factory=list)

    def extend(self, run: StructureRun) -> None:
        self.rows.extend(run.rows)
        self.repeat_rows.extend(run.repeat_rows)
        self.episodes.extend(run.episodes)

    def as_dicts(self) -> List[Dict[str, object]]:
        return [asdict(r) for r in self.rows]


def run_experiment2(grid: GridMap, setting: int, n_observations, models: Sequence[str], repeats: int, seed,
                    helper: HelperConfig = HelperConfig(), gibbs: GibbsConfig = GibbsConfig(),
                    structure_limit: Optional[int] = 10, keep_episodes: bool = False, workers: int = 1,
                    log: Optional[Callable[[str], None]] = None) -> Experiment2Report:
    n_values = [n_observations] if isinstance(n_observations, int) else list(n_observations)
    for m in models:
        if m not in SOURCES:
            raise ValueError(f"unknown model {m!r}; expected one of {SOURCES}")
    structures = sample_structures(grid, setting, structure_limit, seed)
    jobs = [(grid, setting, s_idx, s, n_values, list(models), repeats, seed, helper, gibbs, keep_episodes)
            for s_idx, s in enumerate(structures)]
    report = Experiment2Report()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            runs = pool.map(_evaluate_structure_job, jobs)
            for s_idx, run in enumerate(runs):
                report.extend(run)
                if log:
                    log(f"setting {setting}: structure {s_idx + 1}/{len(structures)} done")
    else:
        for s_idx, job in enumerate(jobs):
            report.extend(_evaluate_structure_job(job))
            if log:
                log(f"setting {setting}: structure {s_idx + 1}/{len(structures)} done")
    return report


def summarize_experiment2(rows: Sequence[Experiment2Row]) -> List[Dict[str, object]]:
    """Mean score and mean per-structure variance per (setting, model, n)."""
    groups: Dict[Tuple[int, str, int], List[Experiment2Row]] = {}
    for r in rows:
        groups.setdefault((r.setting, r.model, r.n_observations), []).append(r)
    out = []
    for (setting, model, n), members in sorted(groups.items()):
        out.append({
            "setting": setting,
            "model": model,
            "n_observations": n,
            "structures": len(members),
            "mean_score": float(np.mean([m.mean_score for m in members])),
            "mean_variance": float(np.mean([m.variance for m in members])),
        })
    return out
