"""Subgoal-sequence likelihood of observed paths, boundary segmentation and the candidate space."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.gridworld import GridMap, State, action_between
from src.planner import GoalUnreachable, goal_cells, log_policy

Path = Tuple[State, ...]


@dataclass(frozen=True, order=True)
class SubgoalSequence:
    """Ordered item ids plus the implicit final destination."""

    items: Tuple[int, ...]
    dest: str

    @property
    def key(self) -> str:
        return f"{','.join(str(i) for i in self.items)}|{self.dest}"

    @classmethod
    def from_key(cls, key: str) -> "SubgoalSequence":
        items, _, dest = key.partition("|")
        if not dest:
            raise ValueError(f"bad sequence key {key!r}")
        return cls(tuple(int(i) for i in items.split(",") if i.strip()), dest.strip())

    def goals(self, grid: GridMap) -> List[State]:
        return goal_cells(grid, self.items, self.dest)

    def validate(self, grid: GridMap) -> None:
        rows = [grid.row_of(i) for i in self.items]
        if any(b <= a for a, b in zip(rows, rows[1:])):
            raise ValueError(f"items {list(self.items)} are not in increasing row order")
        grid.destination_cell(self.dest)

    def __str__(self):
        return f"[{','.join(str(i) for i in self.items)}]->{self.dest}"


def segment_boundaries(path: Sequence[State], goals: Sequence[State]) -> Optional[List[int]]:
    """1-based boundaries b with b_0 = 1 and b_m = first t > b_{m-1} with s_{t-1} = g_m.

    Returns None when the path does not achieve every goal in order.
    """
    if not path:
        raise ValueError("empty path")
    b = [1]
    for goal in goals:
        # s_{t-1} = goal with t > b_{m-1}  <=>  0-based index >= b_{m-1} - 1
        for idx in range(b[-1] - 1, len(path)):
            if path[idx] == goal:
                b.append(idx + 2)
                break
        else:
            return None
    return b


def boundaries_for(grid: GridMap, path: Sequence[State], gseq: SubgoalSequence) -> Optional[List[int]]:
    return segment_boundaries(path, gseq.goals(grid))


def satisfies(grid: GridMap, path: Sequence[State], gseq: SubgoalSequence) -> bool:
    b = boundaries_for(grid, path, gseq)
    return b is not None and path[-1] == grid.destination_cell(gseq.dest)


def _step_logp(grid: GridMap, goal: State, s: State, nxt: State, beta: float) -> float:
    a = action_between(s, nxt)
    if a is None:
        return -math.inf
    try:
        policy = log_policy(grid, goal, s, beta)
    except GoalUnreachable:
        return -math.inf
    for action, lp in policy:
        if action == a:
            return lp
    return -math.inf


def sequence_log_likelihood(grid: GridMap, path: Sequence[State], gseq: SubgoalSequence, beta: float) -> float:
    goals = gseq.goals(grid)
    b = segment_boundaries(path, goals)
    # the final goal must be first reached at the last state
    if b is None or b[-1] != len(path) + 1:
        return -math.inf
    beta = float(beta)
    total = 0.0
    for m, goal in enumerate(goals, start=1):
        # transitions leaving s_t for t in [max(b_{m-1} - 1, 1), b_m - 2] are governed by g_m
        first = max(b[m - 1] - 1, 1)
        for t in range(first, b[m] - 1):
            total += _step_logp(grid, goal, path[t - 1], path[t], beta)
            if total == -math.inf:
                return total
    return total


def sequence_likelihood(grid: GridMap, path: Sequence[State], gseq: SubgoalSequence, beta: float) -> float:
    return math.exp(sequence_log_likelihood(grid, path, gseq, beta))


def partial_sequence_log_likelihood(grid: GridMap, prefix: Sequence[State], gseq: SubgoalSequence,
                                    beta: float) -> float:
    goals = gseq.goals(grid)
    beta = float(beta)
    total, m = 0.0, 0
    for s, nxt in zip(prefix, prefix[1:]):
        while m < len(goals) and s == goals[m]:
            m += 1
        if m == len(goals):
            # the destination is terminal
            return -math.inf
        total += _step_logp(grid, goals[m], s, nxt, beta)
        if total == -math.inf:
            return total
    return total


def partial_sequence_likelihood(grid: GridMap, prefix: Sequence[State], gseq: SubgoalSequence,
                                beta: float) -> float:
    return math.exp(partial_sequence_log_likelihood(grid, prefix, gseq, beta))


def enumerate_candidates(grid: GridMap, dest: str) -> List[SubgoalSequence]:
    """Every row-ordered item list with one item from each of 1..R chosen rows, ending at dest."""
    grid.destination_cell(dest)
    rows = grid.item_rows()
    out = []
    for r in range(1, len(rows) + 1):
        for chosen in itertools.combinations(rows, r):
            for items in itertools.product(*chosen):
                out.append(SubgoalSequence(tuple(items), dest))
    return out


def candidate_count(grid: GridMap) -> int:
    total = 0
    rows = grid.item_rows()
    for r in range(1, len(rows) + 1):
        for chosen in itertools.combinations(rows, r):
            total += math.prod(len(row) for row in chosen)
    return total


class PrefixTracker:
    """Running partial log-likelihoods of one growing prefix under many sequence hypotheses.

    Hypotheses sharing a current subgoal share one policy lookup per step.
    """

    def __init__(self, grid: GridMap, hypotheses: Sequence[SubgoalSequence], beta: float, start: State):
        self.grid = grid
        self.hypotheses = list(hypotheses)
        self.beta = float(beta)
        goals = [h.goals(grid) for h in self.hypotheses]
        width = max((len(g) for g in goals), default=1)
        self._gx = np.full((len(goals), width), -1, dtype=int)
        self._gy = np.full((len(goals), width), -1, dtype=int)
        for h, cells in enumerate(goals):
            self._gx[h, :len(cells)] = [c.x for c in cells]
            self._gy[h, :len(cells)] = [c.y for c in cells]
        self._n_goals = np.array([len(g) for g in goals], dtype=int)
        self._rows = np.arange(len(goals))
        self._stage = np.zeros(len(goals), dtype=int)
        self.log_likelihood = np.zeros(len(goals))
        self.here = start
        self.steps = 0

    def _current(self, rows: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        idx = np.minimum(self._stage[rows], self._n_goals[rows] - 1)
        return self._gx[rows, idx], self._gy[rows, idx]

    def extend(self, nxt: State) -> np.ndarray:
        s = self.here
        alive = np.isfinite(self.log_likelihood)
        while True:
            gx, gy = self._current(self._rows)
            arrived = alive & (self._stage < self._n_goals) & (gx == s.x) & (gy == s.y)
            if not arrived.any():
                break
            self._stage[arrived] += 1
        # the destination is terminal
        finished = alive & (self._stage >= self._n_goals)
        self.log_likelihood[finished] = -math.inf
        live = self._rows[alive & ~finished]
        if len(live):
            gx, gy = self._current(live)
            codes = gx * self.grid.height + gy
            for code in np.unique(codes):
                goal = State(int(code) // self.grid.height, int(code) % self.grid.height)
                self.log_likelihood[live[codes == code]] += _step_logp(self.grid, goal, s, nxt, self.beta)
        self.here = nxt
        self.steps += 1
        return self.log_likelihood
