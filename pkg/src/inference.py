"""Dirichlet-process subgoal inference (CRP Gibbs sampling) and the three alternative models."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import logsumexp

from src.gridworld import GridMap
from src.likelihood import Path, SubgoalSequence, enumerate_candidates, satisfies, sequence_log_likelihood

MODELS = ("crp", "independent", "logical", "copy")
ESTIMATORS = ("count", "rao_blackwell")
TIE_TOLERANCE = 1e-9


class InconsistentObservation(ValueError):
    pass


@dataclass(frozen=True)
class GibbsConfig:
    """Sampler settings.

    estimator: "count" scores each sequence by the fraction of kept sweeps whose table
    parameters contain it; "rao_blackwell" averages, per kept sweep, the exact probability
    that some table's parameter equals it given the current seating.
    """

    alpha: float = 0.015
    iterations: int = 5000
    burn_in: int = 1000
    beta: float = 6.0
    seed: Union[int, Sequence[int], None] = 0
    estimator: str = "count"

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError(f"need 0 <= burn_in < iterations, got {self.burn_in}/{self.iterations}")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"unknown estimator {self.estimator!r}; expected one of {ESTIMATORS}")

    def reseeded(self, seed) -> "GibbsConfig":
        return replace(self, seed=seed)


@dataclass
class PosteriorTable:
    """P(g in g_1:K | s_1:N) per subgoal sequence; `raw` keeps unclamped per-table counts when sampled."""

    dest: str
    model: str
    entries: Dict[SubgoalSequence, float] = field(default_factory=dict)
    raw: Dict[SubgoalSequence, float] = field(default_factory=dict)

    def get(self, gseq: SubgoalSequence) -> float:
        return self.entries.get(gseq, 0.0)

    def top(self, n: int = 5) -> List[Tuple[SubgoalSequence, float]]:
        ranked = sorted(self.entries.items(), key=lambda kv: (-kv[1], len(kv[0].items), kv[0].items))
        return ranked[:n]

    def support(self) -> List[Tuple[SubgoalSequence, float]]:
        return [(g, p) for g, p in sorted(self.entries.items()) if p > 0]

    def to_json(self) -> Dict[str, float]:
        return {g.key: p for g, p in sorted(self.entries.items())}

    @classmethod
    def from_json(cls, data: Dict[str, float], dest: str, model: str) -> "PosteriorTable":
        return cls(dest, model, {SubgoalSequence.from_key(k): float(v) for k, v in data.items()})

    def rows(self) -> List[Dict[str, object]]:
        return [
            {"dest": g.dest, "items": ",".join(str(i) for i in g.items), "probability": p, "model": self.model}
            for g, p in self.top(len(self.entries))
        ]


def average_tables(tables: Sequence[PosteriorTable]) -> PosteriorTable:
    if not tables:
        raise ValueError("nothing to merge")
    merged = PosteriorTable(tables[0].dest, tables[0].model)
    for attr in ("entries", "raw"):
        acc: Counter = Counter()
        for t in tables:
            acc.update(getattr(t, attr))
        setattr(merged, attr, {g: v / len(tables) for g, v in acc.items()})
    return merged


class ObservationModel:
    """Log-likelihoods of N observed paths under every candidate sequence, with the uniform prior P_0."""

    def __init__(self, candidates: Sequence[SubgoalSequence], loglik: np.ndarray):
        self.candidates = list(candidates)
        self.loglik = np.asarray(loglik, dtype=float)
        if self.loglik.shape[1:] != (len(self.candidates),):
            raise ValueError("likelihood matrix does not match the candidate list")
        self.log_prior = np.full(len(self.candidates), -math.log(len(self.candidates)))
        self.index = {g: c for c, g in enumerate(self.candidates)}
        self.log_evidence = logsumexp(self.loglik + self.log_prior, axis=1) if len(self.loglik) else np.array([])

    @property
    def n_paths(self) -> int:
        return self.loglik.shape[0]

    @classmethod
    def build(cls, grid: GridMap, paths: Sequence[Path], dest: str, beta: float,
              candidates: Optional[Sequence[SubgoalSequence]] = None) -> "ObservationModel":
        if not paths:
            raise ValueError("no observed paths")
        end = grid.destination_cell(dest)
        for i, path in enumerate(paths):
            if not path or path[-1] != end:
                raise InconsistentObservation(f"inconsistent observation: path {i} does not end at {dest}")
        if candidates is None:
            candidates = enumerate_candidates(grid, dest)
        loglik = np.array([[sequence_log_likelihood(grid, p, g, beta) for g in candidates] for p in paths])
        bad = np.flatnonzero(np.all(np.isneginf(loglik), axis=1))
        if len(bad):
            raise InconsistentObservation(f"inconsistent observation: path {int(bad[0])} satisfies no candidate")
        return cls(candidates, loglik)

    def log_posterior(self, members: Iterable[int]) -> np.ndarray:
        """Unnormalised log P_0(g) prod_i P(s_i | g) over the candidates."""
        members = list(members)
        return self.log_prior + self.loglik[members].sum(axis=0)

    def single_posterior(self, i: int) -> np.ndarray:
        logp = self.log_posterior([i])
        return np.exp(logp - logsumexp(logp))


def derive_seed(seed, *keys: int) -> List[int]:
    """Seed material for an independent numpy stream: the root seed followed by the stream keys."""
    root = [] if seed is None else [int(s) for s in np.atleast_1d(seed)]
    return root + [int(k) for k in keys]


def sample_log_categorical(logw: np.ndarray, rng: np.random.Generator) -> int:
    """Draw an index from unnormalised log weights (max-subtracted, cumulative search)."""
    logw = np.asarray(logw, dtype=float)
    top = np.max(logw)
    if not np.isfinite(top):
        raise ValueError("all weights are zero")
    p = np.exp(logw - top)
    cdf = np.cumsum(p)
    idx = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(idx, len(p) - 1)


@dataclass
class CRPState:
    assignments: List[int]
    table_params: Dict[int, SubgoalSequence] = field(default_factory=dict)
    counts: Dict[int, int] = field(default_factory=dict)
    next_table: int = 0

    def members(self, k: int) -> List[int]:
        return [i for i, z in enumerate(self.assignments) if z == k]

    def tables(self) -> List[int]:
        return sorted(self.counts)

    def open_table(self, gseq: SubgoalSequence) -> int:
        k = self.next_table
        self.next_table += 1
        self.table_params[k] = gseq
        self.counts[k] = 0
        return k

    def seat(self, i: int, k: int) -> None:
        self.assignments[i] = k
        self.counts[k] += 1

    def unseat(self, i: int) -> None:
        k = self.assignments[i]
        self.assignments[i] = -1
        self.counts[k] -= 1
        if self.counts[k] == 0:
            del self.counts[k]
            del self.table_params[k]

    def check(self, model: ObservationModel) -> None:
        if sum(self.counts.values()) != len(self.assignments):
            raise AssertionError("table occupancies do not sum to N")
        if set(self.counts) != set(self.table_params):
            raise AssertionError("occupied tables and parameters disagree")
        for k, g in self.table_params.items():
            if np.any(np.isneginf(model.loglik[self.members(k), model.index[g]])):
                raise AssertionError(f"table {k} holds a path its sequence {g} does not explain")


def table_assignment_logweights(crp: CRPState, i: int, model: ObservationModel,
                                alpha: float) -> Tuple[List[int], np.ndarray]:
    """Log weights for seating path i at each occupied table, then at a new table (last entry)."""
    n = len(crp.assignments)
    denom = math.log(n - 1 + alpha)
    tables = crp.tables()
    logw = np.empty(len(tables) + 1)
    for j, k in enumerate(tables):
        logw[j] = math.log(crp.counts[k]) - denom + model.loglik[i, model.index[crp.table_params[k]]]
    logw[-1] = math.log(alpha) - denom + model.log_evidence[i]
    return tables, logw


def resample_table_params(model: ObservationModel, members: Sequence[int], rng: np.random.Generator) -> SubgoalSequence:
    logp = model.log_posterior(members)
    if not np.any(np.isfinite(logp)):
        raise ValueError("no candidate explains every path on the table")
    return model.candidates[sample_log_categorical(logp, rng)]


def table_param_posterior(model: ObservationModel, members: Sequence[int]) -> np.ndarray:
    """Normalised P(g | paths seated at the table) over the candidates."""
    logp = model.log_posterior(members)
    if not np.any(np.isfinite(logp)):
        raise ValueError("no candidate explains every path on the table")
    return np.exp(logp - logsumexp(logp))


@dataclass
class ChainResult:
    posterior: PosteriorTable
    state: CRPState
    sweeps_counted: int


def run_chain(model: ObservationModel, dest: str, cfg: GibbsConfig, check: bool = False) -> ChainResult:
    rng = np.random.default_rng(cfg.seed)
    n = model.n_paths
    crp = CRPState(assignments=[-1] * n)
    for i in range(n):
        crp.seat(i, crp.open_table(resample_table_params(model, [i], rng)))

    per_table = np.zeros(len(model.candidates))
    at_least_one = np.zeros(len(model.candidates))
    for sweep in range(cfg.iterations):
        for i in range(n):
            crp.unseat(i)
            tables, logw = table_assignment_logweights(crp, i, model, cfg.alpha)
            choice = sample_log_categorical(logw, rng)
            k = tables[choice] if choice < len(tables) else crp.open_table(resample_table_params(model, [i], rng))
            crp.seat(i, k)
        for k in crp.tables():
            crp.table_params[k] = resample_table_params(model, crp.members(k), rng)
        if check:
            crp.check(model)
        if sweep < cfg.burn_in:
            continue
        if cfg.estimator == "rao_blackwell":
            miss = np.ones(len(model.candidates))
            for k in crp.tables():
                p = table_param_posterior(model, crp.members(k))
                per_table += p
                miss *= 1.0 - p
            at_least_one += 1.0 - miss
        else:
            idx = [model.index[crp.table_params[k]] for k in crp.tables()]
            np.add.at(per_table, idx, 1.0)
            at_least_one[sorted(set(idx))] += 1.0

    kept = cfg.iterations - cfg.burn_in
    posterior = PosteriorTable(
        dest,
        "crp",
        entries={g: float(c / kept) for g, c in zip(model.candidates, at_least_one) if c > 0},
        raw={g: float(c / kept) for g, c in zip(model.candidates, per_table) if c > 0},
    )
    return ChainResult(posterior, crp, kept)


def gibbs_infer(grid: GridMap, paths: Sequence[Path], dest: str, cfg: GibbsConfig = GibbsConfig()) -> PosteriorTable:
    model = ObservationModel.build(grid, paths, dest, cfg.beta)
    return run_chain(model, dest, cfg).posterior


def gibbs_infer_chains(grid: GridMap, paths: Sequence[Path], dest: str, cfg: GibbsConfig = GibbsConfig(),
                       chains: int = 4) -> PosteriorTable:
    """Independent chains seeded [seed, c], merged by averaging."""
    model = ObservationModel.build(grid, paths, dest, cfg.beta)
    tables = []
    for c in range(chains):
        tables.append(run_chain(model, dest, cfg.reseeded(derive_seed(cfg.seed, c))).posterior)
    return average_tables(tables)


def independent_model(grid: GridMap, paths: Sequence[Path], dest: str, beta: float) -> PosteriorTable:
    model = ObservationModel.build(grid, paths, dest, beta)
    miss = np.ones(len(model.candidates))
    for i in range(model.n_paths):
        miss *= 1.0 - model.single_posterior(i)
    hit = 1.0 - miss
    return PosteriorTable(dest, "independent", {g: float(p) for g, p in zip(model.candidates, hit) if p > 0})


def logical_possibility_model(grid: GridMap, paths: Sequence[Path], dest: str) -> PosteriorTable:
    if not paths:
        raise ValueError("no observed paths")
    hypotheses = [SubgoalSequence((), dest)] + enumerate_candidates(grid, dest)
    entries = {}
    for g in hypotheses:
        hits = sum(1 for p in paths if satisfies(grid, p, g))
        if hits:
            entries[g] = hits / len(paths)
    return PosteriorTable(dest, "logical", entries)


def max_subgoal(grid: GridMap, path: Path, dest: str, beta: float) -> SubgoalSequence:
    """Most likely sequence the path includes; ties go to the longer, then lexicographically smaller, list."""
    hypotheses = [SubgoalSequence((), dest)] + enumerate_candidates(grid, dest)
    scores = [sequence_log_likelihood(grid, path, g, beta) for g in hypotheses]
    best = max(scores)
    if best == -math.inf:
        raise InconsistentObservation(f"inconsistent observation: path does not end at {dest}")
    tied = [g for g, s in zip(hypotheses, scores) if s >= best - TIE_TOLERANCE]
    return min(tied, key=lambda g: (-len(g.items), g.items))


def copy_model(grid: GridMap, paths: Sequence[Path], dest: str, beta: float) -> PosteriorTable:
    if not paths:
        raise ValueError("no observed paths")
    return PosteriorTable(dest, "copy", {max_subgoal(grid, p, dest, beta): 1.0 for p in paths})


def infer(model_name: str, grid: GridMap, paths: Sequence[Path], dest: str, cfg: GibbsConfig) -> PosteriorTable:
    if model_name == "crp":
        return gibbs_infer(grid, paths, dest, cfg)
    if model_name == "independent":
        return independent_model(grid, paths, dest, cfg.beta)
    if model_name == "logical":
        return logical_possibility_model(grid, paths, dest)
    if model_name == "copy":
        return copy_model(grid, paths, dest, cfg.beta)
    raise ValueError(f"unknown model {model_name!r}; expected one of {MODELS}")
