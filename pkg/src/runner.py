"""Command-line entry point: map tools, posterior inference and the two experiment drivers."""
import argparse
import os
import sys
from dataclasses import dataclass, field, fields, replace
from typing import List, Optional

# add parent to path for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
import yaml

from src.collab import SOURCES, HelperConfig, run_experiment2, summarize_experiment2
from src.experiments import correlate, generate_exp1_stimuli, run_exp1, taxonomy
from src.gridworld import DEFAULT_MAP, load_map, unreachable_pairs
from src.inference import ESTIMATORS, MODELS, GibbsConfig, derive_seed, infer
from src.ingester import (DEFAULT_JOBS, DEFAULT_STIMULI, load_config, load_jobs, load_judgments, load_observations,
                          load_stimuli)
from src.likelihood import candidate_count
from src.planner import MODES
from src.reports import (EXP2_COLUMNS, PREDICTION_COLUMNS, SUMMARY_COLUMNS, build_summary_message,
                         build_top_message, write_csv, write_json, write_jsonl, write_posterior)

OUTPUT_ENV = "SUBGOALS_OUTPUT_DIR"
EXIT_RUNTIME = 1
EXIT_INPUT = 2
DEFAULT_CONFIG = "config.yaml"

# config-file section -> {key: RunConfig field}
_SECTIONS = {
    "planner": {"beta": "beta", "addons": "addons", "mode": "mode"},
    "gibbs": {"alpha": "alpha", "iterations": "iterations", "burn_in": "burn_in", "estimator": "estimator"},
    "helper": {"beta_helper": "beta_helper", "threshold": "threshold"},
    "experiment1": {"jobs": "jobs", "stimuli": "stimuli", "paths": "paths_per_job", "models": "exp1_models"},
    "experiment2": {"settings": "settings", "n_values": "n_values", "models": "exp2_models",
                    "repeats": "repeats", "structures": "structures", "iterations": "exp2_iterations",
                    "burn_in": "exp2_burn_in", "estimator": "exp2_estimator", "workers": "workers",
                    "episodes": "episodes"},
}


def log(msg: str) -> None:
    print(f"[subgoals] {msg}", flush=True)


@dataclass
class RunConfig:
    map: str = str(DEFAULT_MAP)
    seed: int = 0
    alpha: float = 0.015
    beta: float = 6.0
    beta_helper: float = 2.0
    threshold: float = 0.5
    iterations: int = 5000
    burn_in: int = 1000
    models: List[str] = field(default_factory=lambda: list(MODELS))
    output_dir: str = "./output"
    addons: bool = True
    mode: str = "optimal"
    estimator: str = "count"
    jobs: str = str(DEFAULT_JOBS)
    stimuli: Optional[str] = str(DEFAULT_STIMULI)
    paths_per_job: Optional[int] = None
    exp1_models: Optional[List[str]] = None
    settings: List[int] = field(default_factory=lambda: [1, 2, 3])
    n_values: List[int] = field(default_factory=lambda: list(range(1, 9)))
    exp2_models: List[str] = field(default_factory=lambda: list(SOURCES))
    repeats: int = 5
    structures: Optional[int] = 10
    exp2_iterations: Optional[int] = None
    exp2_burn_in: Optional[int] = None
    exp2_estimator: str = "rao_blackwell"
    workers: int = 1
    episodes: bool = False

    @classmethod
    def from_sources(cls, file_config: dict, args: argparse.Namespace, environ=os.environ) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        values = {}
        for key, value in (file_config or {}).items():
            if key in _SECTIONS and isinstance(value, dict):
                for sub, sub_value in value.items():
                    if sub in _SECTIONS[key]:
                        values[_SECTIONS[key][sub]] = sub_value
            elif key in known:
                values[key] = value
        if environ.get(OUTPUT_ENV):
            values["output_dir"] = environ[OUTPUT_ENV]
        for key, value in vars(args).items():
            if key in known and value is not None:
                values[key] = value
        return replace(cls(), **values)

    def validate(self) -> None:
        if self.alpha <= 0:
            raise ValueError(f"--alpha must be > 0, got {self.alpha}")
        if self.beta < 0:
            raise ValueError(f"--beta must be >= 0, got {self.beta}")
        if self.beta_helper <= 0:
            raise ValueError(f"--beta-helper must be > 0, got {self.beta_helper}")
        if not 0 < self.threshold <= 1:
            raise ValueError(f"--threshold must be in (0, 1], got {self.threshold}")
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError(f"need 0 <= --burnin < --iters, got {self.burn_in}/{self.iterations}")
        for m in self.models:
            if m not in MODELS:
                raise ValueError(f"unknown model {m!r}; expected one of {MODELS}")
        for m in self.exp2_models:
            if m not in SOURCES:
                raise ValueError(f"unknown Experiment 2 model {m!r}; expected one of {SOURCES}")
        if self.mode not in MODES:
            raise ValueError(f"planner mode must be one of {MODES}, got {self.mode!r}")
        for name in ("estimator", "exp2_estimator"):
            if getattr(self, name) not in ESTIMATORS:
                raise ValueError(f"unknown {name} {getattr(self, name)!r}; expected one of {ESTIMATORS}")
        if self.paths_per_job is not None and self.paths_per_job < 1:
            raise ValueError(f"experiment1.paths must be >= 1, got {self.paths_per_job}")

    def gibbs(self, seed=None) -> GibbsConfig:
        return GibbsConfig(alpha=self.alpha, iterations=self.iterations, burn_in=self.burn_in, beta=self.beta,
                           seed=self.seed if seed is None else seed, estimator=self.estimator)

    def exp2_gibbs(self) -> GibbsConfig:
        iterations = self.exp2_iterations or self.iterations
        burn_in = self.exp2_burn_in if self.exp2_burn_in is not None else min(self.burn_in, iterations - 1)
        return GibbsConfig(alpha=self.alpha, iterations=iterations, burn_in=burn_in, beta=self.beta,
                           seed=self.seed, estimator=self.exp2_estimator)

    def helper(self) -> HelperConfig:
        return HelperConfig(self.threshold, self.beta_helper)


def _csv_list(cast):
    def parse(text):
        try:
            return [cast(v.strip()) for v in text.split(",") if v.strip()]
        except ValueError as e:
            raise argparse.ArgumentTypeError(str(e)) from e
    return parse


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"YAML config file (default {DEFAULT_CONFIG}; flags override it)")
    common.add_argument("--map", help="map document (default data/warehouse.map)")
    common.add_argument("--seed", type=int, help="root RNG seed (default 0)")
    common.add_argument("--alpha", type=float, help="DP concentration (default 0.015)")
    common.add_argument("--beta", type=float, help="softmax parameter of observed agents (default 6)")
    common.add_argument("--beta-helper", dest="beta_helper", type=float, help="Helper's softmax parameter (default 2)")
    common.add_argument("--threshold", type=float, help="Helper commitment threshold (default 0.5)")
    common.add_argument("--iters", dest="iterations", type=int, help="Gibbs sweeps (default 5000)")
    common.add_argument("--burnin", dest="burn_in", type=int, help="discarded sweeps (default 1000)")
    common.add_argument("--models", type=_csv_list(str), help=f"comma list from {','.join(MODELS)}")
    common.add_argument("--output-dir", dest="output_dir", help=f"output directory (env {OUTPUT_ENV})")

    parser = argparse.ArgumentParser(prog="python -m src.runner", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("map", parents=[common], help="validate a map and print its summary")

    p = sub.add_parser("infer", parents=[common], help="posterior tables for an observation file")
    p.add_argument("observations", help='JSON array of {"dest": "B", "states": [[x, y], ...]}')

    p = sub.add_parser("exp1", parents=[common], help="Experiment 1 stimuli and model predictions")
    p.add_argument("--jobs", help="job definitions (default data/exp1_jobs.yaml)")
    p.add_argument("--stimuli", help="stimulus file to score (default data/exp1_stimuli.json)")
    p.add_argument("--regenerate", action="store_true",
                   help="sample fresh stimuli from the job definitions instead of reading a stimulus file")
    p.add_argument("--paths", dest="paths_per_job", type=int, help="paths per job when regenerating (default 8)")
    p.add_argument("--judgments", help="CSV of judgment proportions to correlate against")
    p.add_argument("--no-addons", dest="addons", action="store_false", default=None,
                   help="regenerated workers ignore zero-cost add-on items")

    p = sub.add_parser("exp2", parents=[common], help="Experiment 2 Worker-Helper evaluation")
    p.add_argument("--settings", type=_csv_list(int), help="comma list of subgoal settings (1,2,3)")
    p.add_argument("--n-values", dest="n_values", type=_csv_list(int), help="comma list of training path counts")
    p.add_argument("--exp2-models", dest="exp2_models", type=_csv_list(str), help=f"comma list from {','.join(SOURCES)}")
    p.add_argument("--repeats", type=int, help="repetitions per structure (default 5)")
    p.add_argument("--structures", type=int, help="structures per setting (default 10)")
    p.add_argument("--workers", type=int, help="processes evaluating structures in parallel")
    p.add_argument("--episodes", action="store_true", default=None, help="write per-step episode logs")
    return parser


def cmd_map(cfg: RunConfig) -> int:
    grid = load_map(cfg.map)
    log(f"map {cfg.map}: {grid.width}x{grid.height}, {len(grid.starts)} starts, {len(grid.items)} items, "
        f"{len(grid.destinations)} destinations, {len(grid.walls)} walls")
    log(f"candidate sequences per destination: {candidate_count(grid)}")
    missing = unreachable_pairs(grid)
    for start, dest in missing:
        log(f"unreachable: ({start.x}, {start.y}) -> {dest}")
    return EXIT_INPUT if missing else 0


def cmd_infer(cfg: RunConfig, observations: str) -> int:
    grid = load_map(cfg.map)
    grouped = load_observations(observations, grid)
    outputs = []
    for k, dest in enumerate(sorted(grouped)):
        log(f"{dest}: {len(grouped[dest])} paths")
        for model in cfg.models:
            table = infer(model, grid, grouped[dest], dest, cfg.gibbs(seed=derive_seed(cfg.seed, k)))
            outputs.extend(write_posterior(cfg.output_dir, table))
            print(build_top_message(table))
    for path in outputs:
        log(f"wrote {path}")
    return 0


def cmd_exp1(cfg: RunConfig, regenerate: bool, judgments_path: Optional[str]) -> int:
    grid = load_map(cfg.map)
    if regenerate or not cfg.stimuli:
        jobs = load_jobs(cfg.jobs)
        for category, styles in taxonomy(jobs).items():
            log(f"category {category}: {dict(styles)}")
        stimuli = generate_exp1_stimuli(grid, cfg.seed, jobs, addons=cfg.addons, mode=cfg.mode,
                                        n_paths=cfg.paths_per_job, beta=cfg.beta)
    else:
        log(f"stimuli from {cfg.stimuli}")
        stimuli = load_stimuli(cfg.stimuli, grid)
    stim_path = write_json(cfg.output_dir, "exp1-stimuli.json", [s.to_json() for s in stimuli])
    log(f"{len(stimuli)} jobs, {sum(len(s.paths) for s in stimuli)} paths")

    models = cfg.exp1_models or cfg.models
    predictions, tables = run_exp1(grid, stimuli, models, cfg.gibbs(), log=log)
    pred_path = write_csv(cfg.output_dir, "exp1-predictions.csv", PREDICTION_COLUMNS,
                          [vars(p) for p in predictions])
    outputs = [stim_path, pred_path]

    summary = []
    for stim in stimuli:
        row = {"job_id": stim.job.job_id, "category": stim.job.category, "style": stim.job.path_style}
        for model in models:
            top = tables[(stim.job.job_id, model)].top(1)
            row[model] = f"[{','.join(map(str, top[0][0].items))}] {top[0][1]:.2f}" if top else "-"
        summary.append(row)

    if judgments_path:
        judgments = load_judgments(judgments_path)
        corr = [{"model": m, "pearson_r": correlate(predictions, judgments, model=m)} for m in models]
        outputs.append(write_csv(cfg.output_dir, "exp1-correlation.csv", ["model", "pearson_r"], corr))
        for row in corr:
            log(f"{row['model']}: r = {row['pearson_r']:.3f}")

    print(build_summary_message("EXPERIMENT 1 - top sequence per job", summary,
                                ["job_id", "category", "style"] + list(models), outputs))
    return 0


def cmd_exp2(cfg: RunConfig) -> int:
    grid = load_map(cfg.map)
    gibbs = cfg.exp2_gibbs()
    rows, repeat_rows, episodes = [], [], []
    for setting in cfg.settings:
        log(f"setting {setting}: n={cfg.n_values}, models={cfg.exp2_models}, repeats={cfg.repeats}")
        report = run_experiment2(grid, setting, cfg.n_values, cfg.exp2_models, cfg.repeats, cfg.seed,
                                 helper=cfg.helper(), gibbs=gibbs, structure_limit=cfg.structures,
                                 keep_episodes=cfg.episodes, workers=cfg.workers, log=log)
        rows.extend(report.rows)
        repeat_rows.extend(report.repeat_rows)
        episodes.extend(report.episodes)

    summary = summarize_experiment2(rows)
    outputs = [
        write_csv(cfg.output_dir, "exp2-report.csv", EXP2_COLUMNS, [vars(r) for r in rows]),
        write_csv(cfg.output_dir, "exp2-repeats.csv", EXP2_COLUMNS, [vars(r) for r in repeat_rows]),
        write_csv(cfg.output_dir, "exp2-summary.csv", SUMMARY_COLUMNS, summary),
    ]
    if cfg.episodes:
        outputs.append(write_jsonl(cfg.output_dir, "exp2-episodes.jsonl", episodes))
    print(build_summary_message("EXPERIMENT 2 - mean Worker score", summary, SUMMARY_COLUMNS, outputs))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        file_config = load_config(args.config or DEFAULT_CONFIG, required=args.config is not None)
        cfg = RunConfig.from_sources(file_config, args)
        cfg.validate()
        if args.command == "map":
            return cmd_map(cfg)
        if args.command == "infer":
            return cmd_infer(cfg, args.observations)
        if args.command == "exp1":
            return cmd_exp1(cfg, args.regenerate, args.judgments)
        return cmd_exp2(cfg)
    except (ValueError, FileNotFoundError, yaml.YAMLError) as e:
        # json.JSONDecodeError is a ValueError
        print(f"[subgoals] error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as e:
        print(f"[subgoals] failed: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
