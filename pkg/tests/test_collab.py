import argparse
import math
import os
from pathlib import Path

import numpy as np
import pytest

from src.collab import (SOURCES, HelperConfig, SubgoalStructure, destination_marginal, enumerate_structures,
                        evaluate_structure, model_posteriors, run_experiment2, run_trial, sample_structures,
                        structure_posteriors, summarize_experiment2, target_item_marginal, training_paths,
                        trial_plan)
from src.gridworld import State
from src.inference import GibbsConfig, PosteriorTable
from src.ingester import load_config
from src.likelihood import SubgoalSequence
from src.runner import RunConfig


def column(x, y0, y1):
    return tuple(State(x, y) for y in range(y0, y1 + 1))


def structure(a, b, c):
    return SubgoalStructure({d: tuple(SubgoalSequence(items, d) for items in lists)
                             for d, lists in zip("ABC", (a, b, c))})


@pytest.fixture
def setting1():
    return structure([(8,)], [(9,)], [(7,)])


def uniform_table(dest, *lists):
    return PosteriorTable(dest, "crp", {SubgoalSequence(items, dest): 1 / len(lists) for items in lists})


def test_structure_counts(grid):
    assert len(enumerate_structures(grid, 1)) == 27
    assert len(enumerate_structures(grid, 2)) == 729
    assert len(enumerate_structures(grid, 3)) == 27
    for s in enumerate_structures(grid, 3)[:5]:
        s.validate(grid)
        assert all(len(seqs) == 2 for seqs in s.lists.values())
    with pytest.raises(ValueError):
        enumerate_structures(grid, 4)


def test_sample_structures_is_seeded(grid):
    a = sample_structures(grid, 2, 10, seed=0)
    assert len(a) == 10
    assert a == sample_structures(grid, 2, 10, seed=0)
    assert len(sample_structures(grid, 1, 100, seed=0)) == 27


def test_no_helper_example(grid, setting1):
    result = run_trial(grid, setting1, {}, State(5, 0), "C", SubgoalSequence((7,), "C"),
                       HelperConfig(posterior_source="none"), seed=0)
    assert result.worker_steps == 22
    assert result.score == 56
    assert result.helper_target is None
    assert result.decision_time is None


def test_ground_truth_example(grid, setting1):
    result = run_trial(grid, setting1, {}, State(5, 0), "C", SubgoalSequence((7,), "C"),
                       HelperConfig(posterior_source="ground_truth"), seed=0)
    assert result.helper_target == 7
    assert result.decision_time == 0
    assert result.target_correct
    assert result.worker_steps == 16
    assert result.score == 68
    assert result.helper_path[0] == grid.helper_start
    assert grid.item_cell(7) in result.helper_path
    assert result.helper_path[-1] == grid.destination_cell(result.helper_dest)


def test_undecided_helper_matches_no_helper(grid, setting1):
    # no posterior mass on any row-3 item, so the marginal never reaches the threshold
    posteriors = {"C": uniform_table("C", (5,))}
    args = (grid, setting1, posteriors, State(3, 0), "C", SubgoalSequence((7,), "C"))
    helped = run_trial(*args, HelperConfig(posterior_source="crp"), seed=4)
    alone = run_trial(*args, HelperConfig(posterior_source="none"), seed=4)
    assert helped == alone


def test_invalid_list_rejected(grid, setting1):
    with pytest.raises(ValueError):
        run_trial(grid, setting1, {}, State(5, 0), "C", SubgoalSequence((8,), "C"), HelperConfig(), seed=0)


def test_helper_config_validation():
    with pytest.raises(ValueError):
        HelperConfig(threshold=0)
    with pytest.raises(ValueError):
        HelperConfig(beta_helper=0)
    with pytest.raises(ValueError):
        HelperConfig(posterior_source="oracle")


def test_target_marginal_start_only_is_prior_mixture(grid):
    posteriors = {"C": uniform_table("C", (7,), (8,), (9,))}
    m = target_item_marginal(grid, (State(2, 0),), posteriors, 2.0)
    for item in (7, 8, 9):
        assert m.decision[item] == pytest.approx(1 / 3)
    assert m.decision[None] == pytest.approx(0.0)


def test_target_marginal_all_mass_on_item(grid):
    posteriors = {"A": uniform_table("A", (8,), (2, 8)), "B": uniform_table("B", (4, 8))}
    m = target_item_marginal(grid, column(5, 0, 4), posteriors, 2.0)
    assert m.decision[8] == pytest.approx(1.0)
    assert m.inclusion[8] == pytest.approx(1.0)
    assert m.best() == (8, pytest.approx(1.0))


def test_target_marginal_favours_on_column_item(grid):
    posteriors = {"C": uniform_table("C", (7,), (8,), (9,))}
    m = target_item_marginal(grid, column(2, 0, 9), posteriors, 2.0)
    assert m.decision[7] > m.decision[8]
    assert m.decision[7] > m.decision[9]
    # 8 and 9 both lie to the right, so the climb cannot tell them apart
    assert m.decision[8] == pytest.approx(m.decision[9])
    assert math.fsum(m.decision.values()) == pytest.approx(1.0)


def test_destination_marginal(grid):
    symmetric = {d: uniform_table(d, (8,)) for d in "ABC"}
    start_only = destination_marginal(grid, (State(5, 0),), symmetric, 2.0)
    for d in "ABC":
        assert start_only[d] == pytest.approx(1 / 3)
    climbed = destination_marginal(grid, column(5, 0, 11), symmetric, 2.0)
    assert climbed["B"] > climbed["A"]
    assert climbed["B"] > climbed["C"]
    assert math.fsum(climbed.values()) == pytest.approx(1.0)
    only_c = destination_marginal(grid, (State(5, 0),), {"C": uniform_table("C", (7,))}, 2.0)
    assert only_c["C"] == 1.0


def trials(grid, s, n=15):
    return trial_plan(grid, s, np.random.default_rng(1))[:n]


def test_helper_never_hurts_and_ground_truth_dominates(grid):
    s = structure([(5, 8)], [(4, 9)], [(6, 7)])
    paths = training_paths(grid, s, 3, np.random.default_rng(2))
    copy = model_posteriors(grid, "copy", s, paths, GibbsConfig(), seed=0)
    for start, dest, g, seed in trials(grid, s):
        alone = run_trial(grid, s, {}, start, dest, g, HelperConfig(posterior_source="none"), seed)
        helped = run_trial(grid, s, copy, start, dest, g, HelperConfig(posterior_source="copy"), seed)
        truth = run_trial(grid, s, {}, start, dest, g, HelperConfig(posterior_source="ground_truth"), seed)
        assert helped.score >= alone.score
        assert truth.score >= helped.score
        assert truth.target_correct


def test_training_paths_follow_structure(grid, setting1):
    paths = training_paths(grid, setting1, 4, np.random.default_rng(0))
    assert {d: len(p) for d, p in paths.items()} == {"A": 4, "B": 4, "C": 4}
    for p in paths["C"]:
        assert grid.item_cell(7) in p
        assert p[-1] == grid.destination_cell("C")


def test_trial_plan_covers_every_start(grid, setting1):
    plan = trial_plan(grid, setting1, np.random.default_rng(0))
    assert len(plan) == 99
    assert {start for start, *_ in plan} == set(grid.starts)


def test_ground_truth_and_no_helper_have_zero_variance(grid, setting1):
    run = evaluate_structure(grid, 1, 0, setting1, [1, 2], ["ground_truth", "none"], 3, 0,
                             HelperConfig(), GibbsConfig())
    assert len(run.rows) == 4
    assert len(run.repeat_rows) == 12
    for row in run.rows:
        assert row.variance == pytest.approx(0.0, abs=1e-12)
        assert row.repeat == 3
    by_model = {r.model: r for r in run.rows if r.n_observations == 1}
    assert by_model["ground_truth"].mean_score > by_model["none"].mean_score
    assert by_model["ground_truth"].target_accuracy == 1.0
    assert math.isnan(by_model["none"].mean_decision_time)


def test_episode_log(grid, setting1):
    run = evaluate_structure(grid, 1, 0, setting1, [1], ["ground_truth"], 1, 0, HelperConfig(), GibbsConfig(),
                             keep_episodes=True)
    kinds = {e["event"] for e in run.episodes}
    assert {"start", "move", "commit", "arrive"} <= kinds
    assert all(e["model"] == "ground_truth" for e in run.episodes)


@pytest.mark.slow
def test_experiment2_small_run(grid):
    gibbs = GibbsConfig(iterations=60, burn_in=20)
    messages = []
    report = run_experiment2(grid, 3, [2], ["crp", "copy", "ground_truth", "none"], 1, 0, gibbs=gibbs,
                             structure_limit=2, log=messages.append)
    assert len(report.rows) == 8
    assert len(messages) == 2
    summary = summarize_experiment2(report.rows)
    scores = {r["model"]: r["mean_score"] for r in summary}
    assert scores["ground_truth"] >= max(scores.values()) - 1e-9
    assert scores["none"] <= min(scores.values()) + 1e-9


def test_run_experiment2_rejects_unknown_model(grid):
    with pytest.raises(ValueError, match="unknown model"):
        run_experiment2(grid, 1, 1, ["oracle"], 1, 0)


def test_structure_posteriors(setting1):
    tables = structure_posteriors(setting1)
    assert tables["C"].entries == {SubgoalSequence((7,), "C"): 1.0}


@pytest.mark.parametrize("threshold", [0.5, 1.0])
def test_sampled_tables_shaped_like_truth_reproduce_ground_truth(grid, threshold):
    s = structure([(8,)], [(8,)], [(8,)])
    as_crp = {d: PosteriorTable(d, "crp", dict(t.entries)) for d, t in structure_posteriors(s).items()}
    for start, dest, g, seed in trials(grid, s, n=12):
        sampled = run_trial(grid, s, as_crp, start, dest, g, HelperConfig(threshold, posterior_source="crp"), seed)
        truth = run_trial(grid, s, {}, start, dest, g, HelperConfig(threshold, posterior_source="ground_truth"), seed)
        assert sampled == truth


def test_threshold_at_prior_mass_commits_like_ground_truth(grid):
    s = structure([(7,)], [(8,)], [(8,)])
    as_crp = {d: PosteriorTable(d, "crp", dict(t.entries)) for d, t in structure_posteriors(s).items()}
    checked = 0
    for start, dest, g, seed in trial_plan(grid, s, np.random.default_rng(3)):
        if dest == "A":
            continue
        sampled = run_trial(grid, s, as_crp, start, dest, g, HelperConfig(0.5, posterior_source="crp"), seed)
        truth = run_trial(grid, s, {}, start, dest, g, HelperConfig(0.5, posterior_source="ground_truth"), seed)
        assert sampled.decision_time == 0
        assert sampled == truth
        checked += 1
    assert checked > 0


@pytest.mark.slow
def test_experiment2_orderings_under_shipped_config(grid):
    cfg = RunConfig.from_sources(load_config(str(Path(__file__).resolve().parent.parent / "config.yaml")),
                                 argparse.Namespace(), environ={})
    baselines = ("independent", "logical", "copy")
    lower_variance = 0
    for setting in (1, 2, 3):
        report = run_experiment2(grid, setting, [2, 4, 8], list(SOURCES), cfg.repeats, cfg.seed,
                                 helper=cfg.helper(), gibbs=cfg.exp2_gibbs(), structure_limit=cfg.structures,
                                 workers=os.cpu_count() or 1)
        summary = summarize_experiment2(report.rows)
        score = {(r["model"], r["n_observations"]): r["mean_score"] for r in summary}
        variance = {m: np.mean([r["mean_variance"] for r in summary if r["model"] == m]) for m in SOURCES}
        for n in (4, 8):
            assert score[("ground_truth", n)] >= score[("crp", n)]
            for b in baselines:
                assert score[("crp", n)] >= score[(b, n)], (setting, n, b)
                assert score[(b, n)] >= score[("none", n)]
        if setting == 1:
            assert score[("ground_truth", 8)] - score[("crp", 8)] <= 5
        assert variance["ground_truth"] == pytest.approx(0.0, abs=1e-12)
        assert variance["none"] == pytest.approx(0.0, abs=1e-12)
        if all(variance["crp"] <= variance[b] for b in baselines):
            lower_variance += 1
    assert lower_variance >= 2
