"""Config, observation, stimulus and judgment file ingestion."""
import csv
import json
import os
from pathlib import Path

import yaml

from src.experiments import JobSpec, JudgmentTable, Stimulus
from src.gridworld import GridMap, State, action_between
from src.likelihood import SubgoalSequence

DATA_DIR = Path(__file__).resolve().parent.parent / "data"
DEFAULT_JOBS = DATA_DIR / "exp1_jobs.yaml"
DEFAULT_STIMULI = DATA_DIR / "exp1_stimuli.json"


class ObservationError(ValueError):
    pass


def load_config(config_path="config.yaml", required=False):
    """Read the YAML config; a missing file is only tolerated when it was not asked for explicitly."""
    if not os.path.exists(config_path):
        if required:
            raise FileNotFoundError(f"config file not found: {config_path}")
        return {}
    with open(config_path) as f:
        return yaml.safe_load(f) or {}


def parse_path(grid: GridMap, states, where="path"):
    if not isinstance(states, list) or not states:
        raise ObservationError(f"{where}: states must be a non-empty list of [x, y] pairs")
    path = []
    for k, pair in enumerate(states):
        if not (isinstance(pair, (list, tuple)) and len(pair) == 2 and all(isinstance(v, int) for v in pair)):
            raise ObservationError(f"{where}: state {k} is not an [x, y] pair: {pair!r}")
        s = State(*pair)
        if not grid.is_open(s):
            raise ObservationError(f"{where}: state {k} ({s.x}, {s.y}) is off the map or a wall")
        if path and action_between(path[-1], s) is None:
            raise ObservationError(f"{where}: states {k - 1} and {k} are not one move apart")
        path.append(s)
    return tuple(path)


def parse_observations(grid: GridMap, records):
    """Group path records {"dest": .., "states": [[x, y], ..]} by destination."""
    if not isinstance(records, list):
        raise ObservationError("observation file must hold a JSON array of path records")
    grouped = {}
    for i, rec in enumerate(records):
        if not isinstance(rec, dict) or "dest" not in rec or "states" not in rec:
            raise ObservationError(f"record {i}: expected keys 'dest' and 'states'")
        dest = rec["dest"]
        if dest not in grid.destination_cells:
            raise ObservationError(f"record {i}: unknown destination {dest!r}")
        path = parse_path(grid, rec["states"], where=f"record {i}")
        if path[-1] != grid.destination_cell(dest):
            raise ObservationError(f"record {i}: path does not end at destination {dest}")
        grouped.setdefault(dest, []).append(path)
    if not grouped:
        raise ObservationError("observation file holds no paths")
    return grouped


def load_observations(path, grid: GridMap):
    with open(path, encoding="utf-8") as f:
        return parse_observations(grid, json.load(f))


def _job_from_record(rec):
    dest = rec["dest"]
    return JobSpec(
        job_id=str(rec["job_id"]),
        dest=dest,
        lists=tuple(SubgoalSequence(tuple(int(i) for i in items), dest) for items in rec["lists"]),
        path_style=rec.get("path_style", "detour"),
        n_paths=int(rec.get("n_paths", 8)),
    )


def load_jobs(path=DEFAULT_JOBS):
    with open(path, encoding="utf-8") as f:
        doc = yaml.safe_load(f) or {}
    return [_job_from_record(rec) for rec in doc.get("jobs", [])]


def load_stimuli(path, grid: GridMap):
    with open(path, encoding="utf-8") as f:
        records = json.load(f)
    stimuli = []
    for rec in records:
        job = _job_from_record(rec)
        paths = [parse_path(grid, p, where=f"{job.job_id} path {k}") for k, p in enumerate(rec["paths"])]
        stimuli.append(Stimulus(job, paths))
    return stimuli


def load_judgments(path):
    """CSV with columns job_id, items, dest, proportion; items comma-separated inside the cell."""
    rows = []
    with open(path, newline="", encoding="utf-8") as f:
        for k, rec in enumerate(csv.DictReader(f), start=2):
            try:
                items = tuple(int(i) for i in rec["items"].split(",") if i.strip())
                rows.append((rec["job_id"], SubgoalSequence(items, rec["dest"].strip()), float(rec["proportion"])))
            except (KeyError, ValueError, AttributeError) as e:
                raise ObservationError(f"{path}: line {k}: {e}") from e
    return JudgmentTable(rows)
