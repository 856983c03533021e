"""Warehouse grid: states, Up/Left/Right moves, map loading and validation."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, NamedTuple, Optional, Tuple

DESTINATION_IDS = ("A", "B", "C")
GLYPHS = frozenset(".#SH123456789ABC")
DEFAULT_MAP = Path(__file__).resolve().parent.parent / "data" / "warehouse.map"


class State(NamedTuple):
    x: int
    y: int


class Action(Enum):
    UP = (0, 1)
    LEFT = (-1, 0)
    RIGHT = (1, 0)

    @property
    def dx(self) -> int:
        return self.value[0]

    @property
    def dy(self) -> int:
        return self.value[1]


class MapParseError(ValueError):
    """Malformed map document. line/column are 1-based, 0 when not tied to a glyph."""

    def __init__(self, message: str, line: int = 0, column: int = 0):
        self.line = line
        self.column = column
        where = f"line {line}, column {column}: " if line else ""
        super().__init__(f"{where}{message}")


class IllegalMove(ValueError):
    pass


@dataclass(frozen=True)
class GridMap:
    width: int
    height: int
    walls: FrozenSet[State]
    starts: Tuple[State, ...]
    items: Tuple[Tuple[int, State], ...]
    destinations: Tuple[Tuple[str, State], ...]
    helper_start: Optional[State] = None

    def __post_init__(self):
        # maps are used as cache keys on every policy lookup
        object.__setattr__(self, "_hash", hash((self.width, self.height, self.walls, self.starts,
                                                self.items, self.destinations, self.helper_start)))

    def __hash__(self):
        return self._hash

    def __reduce__(self):
        # rebuild on unpickle so the cached hash matches the receiving process
        return (self.__class__, (self.width, self.height, self.walls, self.starts, self.items,
                                 self.destinations, self.helper_start))

    def in_bounds(self, s: State) -> bool:
        return 0 <= s.x < self.width and 0 <= s.y < self.height

    def is_open(self, s: State) -> bool:
        return self.in_bounds(s) and s not in self.walls

    @property
    def item_cells(self) -> Dict[int, State]:
        return dict(self.items)

    @property
    def destination_cells(self) -> Dict[str, State]:
        return dict(self.destinations)

    def item_cell(self, item: int) -> State:
        return self.item_cells[item]

    def destination_cell(self, dest: str) -> State:
        cells = self.destination_cells
        if dest not in cells:
            raise ValueError(f"unknown destination {dest!r}")
        return cells[dest]

    def item_rows(self) -> List[Tuple[int, ...]]:
        """Item ids grouped by row, rows ordered by increasing y."""
        rows: Dict[int, List[int]] = {}
        for item, cell in self.items:
            rows.setdefault(cell.y, []).append(item)
        return [tuple(sorted(rows[y])) for y in sorted(rows)]

    def row_of(self, item: int) -> int:
        """1-based row index of an item."""
        for index, row in enumerate(self.item_rows(), start=1):
            if item in row:
                return index
        raise ValueError(f"unknown item {item}")

    def last_row_items(self) -> Tuple[int, ...]:
        rows = self.item_rows()
        return rows[-1] if rows else ()

    def item_at(self, s: State) -> Optional[int]:
        for item, cell in self.items:
            if cell == s:
                return item
        return None


def available_actions(grid: GridMap, s: State) -> FrozenSet[Action]:
    return frozenset(a for a in Action if grid.is_open(State(s.x + a.dx, s.y + a.dy)))


def transition(grid: GridMap, s: State, a: Action) -> State:
    nxt = State(s.x + a.dx, s.y + a.dy)
    if not grid.is_open(s) or not grid.is_open(nxt):
        raise IllegalMove(f"illegal move: {a.name} from ({s.x}, {s.y})")
    return nxt


def action_between(s: State, nxt: State) -> Optional[Action]:
    """The unique action taking s to nxt, or None when they are not adjacent."""
    for a in Action:
        if s.x + a.dx == nxt.x and s.y + a.dy == nxt.y:
            return a
    return None


def predecessors(grid: GridMap, s: State) -> Iterable[State]:
    for a in Action:
        prev = State(s.x - a.dx, s.y - a.dy)
        if grid.is_open(prev):
            yield prev


@lru_cache(maxsize=None)
def distances_to(grid: GridMap, goal: State) -> Dict[State, int]:
    """Shortest step counts to goal from every state that can reach it (reverse BFS).

    The returned dict is cached and shared; callers must not mutate it.
    """
    if not grid.is_open(goal):
        return {}
    dist = {goal: 0}
    queue = deque([goal])
    while queue:
        s = queue.popleft()
        for prev in predecessors(grid, s):
            if prev not in dist:
                dist[prev] = dist[s] + 1
                queue.append(prev)
    return dist


def reachable_from(grid: GridMap, start: State) -> FrozenSet[State]:
    seen = {start}
    queue = deque([start])
    while queue:
        s = queue.popleft()
        for a in available_actions(grid, s):
            nxt = transition(grid, s, a)
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return frozenset(seen)


def parse_map(text: str) -> GridMap:
    lines = [line.rstrip("\r") for line in text.splitlines()]
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise MapParseError("empty map document")
    width = len(lines[0])
    height = len(lines)

    walls, starts = set(), []
    items: Dict[int, State] = {}
    item_pos: Dict[int, Tuple[int, int]] = {}
    dests: Dict[str, State] = {}
    helper = None
    for line_no, line in enumerate(lines, start=1):
        if len(line) != width:
            raise MapParseError(f"ragged row: expected {width} cells, got {len(line)}", line_no, len(line) + 1)
        y = height - line_no
        for col, glyph in enumerate(line, start=1):
            cell = State(col - 1, y)
            if glyph not in GLYPHS:
                raise MapParseError(f"malformed glyph {glyph!r}", line_no, col)
            if glyph == "#":
                walls.add(cell)
            elif glyph == "S":
                starts.append(cell)
            elif glyph == "H":
                if helper is not None:
                    raise MapParseError("duplicated helper start", line_no, col)
                helper = cell
            elif glyph.isdigit():
                item = int(glyph)
                if item in items:
                    raise MapParseError(f"duplicated item {item}", line_no, col)
                items[item] = cell
                item_pos[item] = (line_no, col)
            elif glyph in DESTINATION_IDS:
                if glyph in dests:
                    raise MapParseError(f"duplicated destination {glyph}", line_no, col)
                dests[glyph] = cell

    for dest in DESTINATION_IDS:
        if dest not in dests:
            raise MapParseError(f"missing destination {dest}")

    grid = GridMap(
        width=width,
        height=height,
        walls=frozenset(walls),
        starts=tuple(sorted(starts)),
        items=tuple(sorted(items.items())),
        destinations=tuple(sorted(dests.items())),
        helper_start=helper,
    )
    _check_layout(grid, item_pos)
    return grid


def _check_layout(grid: GridMap, item_pos: Dict[int, Tuple[int, int]]) -> None:
    cells = grid.item_cells
    if set(cells) == set(range(1, 10)):
        for first in (1, 4, 7):
            trio = (first, first + 1, first + 2)
            stray = [i for i in trio if cells[i].y != cells[first].y]
            if stray:
                line, col = item_pos[stray[0]]
                raise MapParseError(f"row ordering violated: items {first}-{first + 2} must share one row", line, col)

    rows = grid.item_rows()
    for lower, upper in zip(rows, rows[1:]):
        if max(lower) > min(upper):
            line, col = item_pos[max(lower)]
            raise MapParseError(f"row ordering violated: item {max(lower)} below item {min(upper)}", line, col)

    if rows:
        ys = sorted({cell.y for _, cell in grid.items})
        for dest, cell in grid.destinations:
            if cell.y <= ys[-1]:
                raise MapParseError(f"row ordering violated: destination {dest} not above the last item row")
        for cell in grid.starts:
            if cell.y >= ys[0]:
                raise MapParseError(f"row ordering violated: start ({cell.x}, {cell.y}) not below the first item row")
        if grid.helper_start is not None and len(ys) >= 2:
            if not ys[-2] < grid.helper_start.y < ys[-1]:
                raise MapParseError("helper start must lie between the last two item rows")


def load_map(path=DEFAULT_MAP) -> GridMap:
    return parse_map(Path(path).read_text(encoding="utf-8"))


def serialize_map(grid: GridMap) -> str:
    glyphs = {cell: "#" for cell in grid.walls}
    glyphs.update({cell: "S" for cell in grid.starts})
    glyphs.update({cell: str(item) for item, cell in grid.items})
    glyphs.update({cell: dest for dest, cell in grid.destinations})
    if grid.helper_start is not None:
        glyphs[grid.helper_start] = "H"
    lines = []
    for y in range(grid.height - 1, -1, -1):
        lines.append("".join(glyphs.get(State(x, y), ".") for x in range(grid.width)))
    return "\n".join(lines) + "\n"


def unreachable_pairs(grid: GridMap) -> List[Tuple[State, str]]:
    """(start, destination) pairs with no path between them."""
    missing = []
    for start in grid.starts:
        reach = reachable_from(grid, start)
        for dest, cell in grid.destinations:
            if cell not in reach:
                missing.append((start, dest))
    return missing
