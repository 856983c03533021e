"""Single-subgoal value iteration, softmax/optimal policies and hierarchical path generation."""
from __future__ import annotations

import threading
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from src.gridworld import Action, GridMap, State, distances_to, transition

GOAL_REWARD = 100.0
STEP_COST = 2.0
MODES = ("softmax", "optimal")
MAX_PATH_STEPS = 10_000


class GoalUnreachable(ValueError):
    pass


@dataclass(frozen=True)
class ValueTable:
    goal: State
    values: Dict[State, float]

    def __contains__(self, s: State) -> bool:
        return s in self.values

    def q_values(self, grid: GridMap, s: State) -> Dict[Action, float]:
        """Q over admissible actions: those whose successor can still reach the goal."""
        q = {}
        for a in Action:
            nxt = State(s.x + a.dx, s.y + a.dy)
            if grid.is_open(nxt) and nxt in self.values:
                q[a] = -STEP_COST + self.values[nxt]
        return q


@dataclass(frozen=True)
class PlannerConfig:
    beta: float = 6.0
    mode: str = "softmax"
    seed: Optional[int] = None
    addons: bool = False

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")


def plan_values(grid: GridMap, goal: State) -> ValueTable:
    """Value iteration (gamma = 1) for the deterministic MDP that terminates at goal."""
    if not grid.is_open(goal):
        return ValueTable(goal, {})
    open_mask = np.ones((grid.width, grid.height), dtype=bool)
    for w in grid.walls:
        open_mask[w.x, w.y] = False

    v = np.full((grid.width, grid.height), -np.inf)
    v[goal.x, goal.y] = GOAL_REWARD
    while True:
        best = np.full_like(v, -np.inf)
        for a in Action:
            succ = np.full_like(v, -np.inf)
            # succ[x, y] = v[x + dx, y + dy] where in bounds
            src_x = slice(max(a.dx, 0), grid.width + min(a.dx, 0))
            dst_x = slice(max(-a.dx, 0), grid.width + min(-a.dx, 0))
            src_y = slice(max(a.dy, 0), grid.height + min(a.dy, 0))
            dst_y = slice(max(-a.dy, 0), grid.height + min(-a.dy, 0))
            succ[dst_x, dst_y] = v[src_x, src_y]
            best = np.maximum(best, succ - STEP_COST)
        backup = np.where(open_mask, best, -np.inf)
        backup[goal.x, goal.y] = GOAL_REWARD
        if np.array_equal(backup, v):
            break
        v = backup

    xs, ys = np.nonzero(np.isfinite(v))
    return ValueTable(goal, {State(int(x), int(y)): float(v[x, y]) for x, y in zip(xs, ys)})


class ValueCache:
    """Value tables keyed by (map, goal); each table is computed once even under concurrent readers."""

    def __init__(self):
        self._tables: Dict[Tuple[GridMap, State], ValueTable] = {}
        self._lock = threading.Lock()

    def get(self, grid: GridMap, goal: State) -> ValueTable:
        key = (grid, goal)
        table = self._tables.get(key)
        if table is None:
            with self._lock:
                table = self._tables.get(key)
                if table is None:
                    table = plan_values(grid, goal)
                    self._tables[key] = table
        return table

    def clear(self) -> None:
        with self._lock:
            self._tables.clear()


_VALUES = ValueCache()


def value_table(grid: GridMap, goal: State) -> ValueTable:
    return _VALUES.get(grid, goal)


@lru_cache(maxsize=None)
def log_policy(grid: GridMap, goal: State, s: State, beta: float) -> Tuple[Tuple[Action, float], ...]:
    """log P(a | s, goal) over admissible actions; max-subtracted before normalising."""
    q = value_table(grid, goal).q_values(grid, s)
    if not q:
        raise GoalUnreachable(f"goal unreachable: ({goal.x}, {goal.y}) from ({s.x}, {s.y})")
    actions = list(q)
    scaled = beta * np.array([q[a] for a in actions])
    logp = scaled - logsumexp(scaled)
    return tuple(zip(actions, (float(x) for x in logp)))


def softmax_policy(grid: GridMap, goal: State, s: State, beta: float) -> Dict[Action, float]:
    return {a: float(np.exp(lp)) for a, lp in log_policy(grid, goal, s, float(beta))}


def optimal_actions(grid: GridMap, goal: State, s: State) -> List[Action]:
    q = value_table(grid, goal).q_values(grid, s)
    if not q:
        raise GoalUnreachable(f"goal unreachable: ({goal.x}, {goal.y}) from ({s.x}, {s.y})")
    best = max(q.values())
    return [a for a in Action if a in q and q[a] == best]


def goal_cells(grid: GridMap, items: Sequence[int], dest: str) -> List[State]:
    return [grid.item_cell(i) for i in items] + [grid.destination_cell(dest)]


def check_achievable(grid: GridMap, start: State, goals: Sequence[State]) -> None:
    here = start
    for goal in goals:
        if here not in value_table(grid, goal):
            raise ValueError(f"subgoal ({goal.x}, {goal.y}) is not reachable from ({here.x}, {here.y})")
        here = goal


def _addon_actions(grid: GridMap, s: State, goal: State, tied: List[Action], skip: Sequence[State]) -> List[Action]:
    """Tied actions whose successor still passes some extra item at zero added cost."""
    to_goal = distances_to(grid, goal)
    extras = [cell for _, cell in grid.items if cell not in skip]
    keep = []
    for a in tied:
        nxt = transition(grid, s, a)
        for cell in extras:
            via = distances_to(grid, cell)
            if nxt in via and cell in to_goal and via[nxt] + to_goal[cell] == to_goal[nxt]:
                keep.append(a)
                break
    return keep or tied


def next_action(grid: GridMap, s: State, goal: State, cfg: PlannerConfig, rng: np.random.Generator,
                skip: Sequence[State] = ()) -> Action:
    if cfg.mode == "optimal":
        tied = optimal_actions(grid, goal, s)
        if cfg.addons and len(tied) > 1:
            tied = _addon_actions(grid, s, goal, tied, skip)
        return tied[int(rng.integers(len(tied)))] if len(tied) > 1 else tied[0]
    policy = log_policy(grid, goal, s, float(cfg.beta))
    probs = np.exp(np.array([lp for _, lp in policy]))
    choice = int(np.searchsorted(np.cumsum(probs), rng.random() * probs.sum(), side="right"))
    return policy[min(choice, len(policy) - 1)][0]


def generate_path(grid: GridMap, items: Sequence[int], dest: str, start: State, cfg: PlannerConfig,
                  rng: Optional[np.random.Generator] = None) -> Tuple[State, ...]:
    """Walk the hierarchical MDP: act toward the current subgoal, advance on arrival, stop at dest."""
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    goals = goal_cells(grid, items, dest)
    check_achievable(grid, start, goals)
    path = [start]
    here, m = start, 0
    while True:
        while m < len(goals) and here == goals[m]:
            m += 1
        if m == len(goals):
            return tuple(path)
        if len(path) > MAX_PATH_STEPS:
            raise RuntimeError("path generation exceeded the step limit")
        a = next_action(grid, here, goals[m], cfg, rng, skip=goals)
        here = transition(grid, here, a)
        path.append(here)


def shortest_length(grid: GridMap, start: State, goals: Sequence[State]) -> int:
    total, here = 0, start
    for goal in goals:
        dist = distances_to(grid, goal)
        if here not in dist:
            raise ValueError(f"subgoal ({goal.x}, {goal.y}) is not reachable from ({here.x}, {here.y})")
        total += dist[here]
        here = goal
    return total
