"""Report emission: posterior and experiment files plus the console summary block."""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence

from src.inference import PosteriorTable

POSTERIOR_COLUMNS = ["dest", "items", "probability", "model"]
PREDICTION_COLUMNS = ["job_id", "model", "items", "dest", "probability"]
EXP2_COLUMNS = ["setting", "structure_id", "model", "n_observations", "repeat", "mean_score", "variance",
                "mean_decision_time", "target_accuracy", "dest_accuracy"]
SUMMARY_COLUMNS = ["setting", "model", "n_observations", "structures", "mean_score", "mean_variance"]


def _out(output_dir: str, name: str) -> Path:
    out_dir = Path(output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir / name


def write_json(output_dir: str, name: str, payload: Any) -> Path:
    path = _out(output_dir, name)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def write_csv(output_dir: str, name: str, columns: Sequence[str], rows: Iterable[Dict[str, Any]]) -> Path:
    path = _out(output_dir, name)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _cell(v) for k, v in row.items()})
    return path


def write_jsonl(output_dir: str, name: str, records: Iterable[Dict[str, Any]]) -> Path:
    path = _out(output_dir, name)
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    return path


def _cell(value: Any) -> Any:
    if isinstance(value, float):
        return f"{value:.6f}"
    return value


def write_posterior(output_dir: str, table: PosteriorTable) -> List[Path]:
    stem = f"posterior-{table.model}-{table.dest}"
    return [
        write_json(output_dir, f"{stem}.json", table.to_json()),
        write_csv(output_dir, f"{stem}.csv", POSTERIOR_COLUMNS, table.rows()),
    ]


def format_table(rows: Sequence[Dict[str, Any]], columns: Sequence[str]) -> str:
    cells = [[str(_cell(r.get(c, ""))) for c in columns] for r in rows]
    widths = [max([len(c)] + [len(row[i]) for row in cells]) for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines.extend("  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in cells)
    return "\n".join(lines)


def build_top_message(table: PosteriorTable, n: int = 5) -> str:
    lines = [f"{table.model} -> {table.dest}: top {min(n, len(table.entries))} of {len(table.entries)}"]
    for g, p in table.top(n):
        lines.append(f"  {p:8.4f}  [{','.join(map(str, g.items))}]")
    return "\n".join(lines)


def build_summary_message(title: str, rows: Sequence[Dict[str, Any]], columns: Sequence[str],
                          outputs: Sequence[Path]) -> str:
    lines = [
        "==================================================",
        f"  {title}",
        "==================================================",
        "",
        format_table(rows, columns),
        "",
        "Outputs:",
    ]
    lines.extend(f"- `{p}`" for p in outputs)
    return "\n".join(lines)
