import numpy as np
import pytest

from src.experiments import (CATEGORIES, JobSpec, JudgmentTable, Prediction, _style_for, correlate,
                             generate_exp1_stimuli, generate_job_paths, run_exp1, split_starts, taxonomy)
from src.gridworld import State
from src.inference import GibbsConfig
from src.ingester import DEFAULT_STIMULI, load_jobs, load_stimuli
from src.likelihood import SubgoalSequence, satisfies
from src.planner import shortest_length


@pytest.fixture(scope="module")
def jobs():
    return load_jobs()


@pytest.fixture(scope="module")
def stimuli(grid, jobs):
    return generate_exp1_stimuli(grid, 0, jobs)


@pytest.fixture(scope="module")
def shipped(grid):
    return {s.job.job_id: s for s in load_stimuli(DEFAULT_STIMULI, grid)}


def job(job_id):
    return next(j for j in load_jobs() if j.job_id == job_id)


def realised_lists(grid, stim, k, path):
    """Lists of the job that path k satisfies along a shortest route, from a start of the requested style."""
    out = []
    for g in stim.job.lists:
        if not satisfies(grid, path, g) or len(path) - 1 != shortest_length(grid, path[0], g.goals(grid)):
            continue
        on_route, detour = split_starts(grid, g)
        pool = on_route if _style_for(stim.job, k) == "no_detour" else detour
        if path[0] in (pool or on_route + detour):
            out.append(g)
    return out


def seq(*items, dest="A"):
    return SubgoalSequence(tuple(items), dest)


def test_suite_shape(jobs, stimuli):
    assert len(jobs) == 22
    assert len({j.job_id for j in jobs}) == 22
    assert all(len(s.paths) == 8 for s in stimuli)


def test_taxonomy_covers_every_category(jobs):
    counts = taxonomy(jobs)
    assert set(counts) == set(CATEGORIES)
    assert sum(sum(c.values()) for c in counts.values()) == 22
    for category in CATEGORIES:
        assert sum(counts[category].values()) >= 1
    styles = set()
    for c in counts.values():
        styles.update(c)
    assert {"no_detour", "detour"} <= styles


def test_taxonomy_rejects_foreign_category():
    odd = JobSpec("x", "B", (SubgoalSequence((1, 5), "B"), SubgoalSequence((2,), "B")))
    with pytest.raises(ValueError, match="outside the stimulus taxonomy"):
        taxonomy([odd])


def test_job_spec_validation():
    with pytest.raises(ValueError):
        JobSpec("x", "B", ())
    with pytest.raises(ValueError):
        JobSpec("x", "B", (SubgoalSequence((5,), "A"),))
    with pytest.raises(ValueError):
        JobSpec("x", "B", (SubgoalSequence((5,), "B"),), path_style="wandering")


def test_every_path_satisfies_its_list(grid, stimuli):
    for stim in stimuli:
        assert len(stim.lists_used) == len(stim.paths)
        for path, g in zip(stim.paths, stim.lists_used):
            assert satisfies(grid, path, g)
            assert path[0] in grid.starts


def test_detour_job_visits_item_five(grid, stimuli):
    stim = next(s for s in stimuli if s.job.job_id == "job02")
    assert stim.job.path_style == "detour"
    for path in stim.paths:
        assert State(5, 6) in path
        direct = abs(path[0].x - 1) + 12
        assert len(path) - 1 > direct


def test_split_starts(grid):
    on_route, detour = split_starts(grid, SubgoalSequence((5,), "A"))
    assert State(5, 0) in on_route
    assert State(0, 0) in detour
    assert set(on_route) | set(detour) == set(grid.starts)


def test_stimuli_are_deterministic(grid, jobs, stimuli):
    again = generate_exp1_stimuli(grid, 0, jobs)
    assert [s.to_json() for s in again] == [s.to_json() for s in stimuli]
    other = generate_exp1_stimuli(grid, 1, jobs)
    assert [s.to_json() for s in other] != [s.to_json() for s in stimuli]


def test_two_list_jobs_draw_both_lists(grid):
    used = set()
    for seed in range(4):
        stim = generate_job_paths(grid, job("job11"), np.random.default_rng(seed))
        used.update(g.items for g in stim.lists_used)
    assert used == {(1,), (3,)}


def test_run_exp1_cheap_models(grid, stimuli):
    predictions, tables = run_exp1(grid, stimuli[:3], ["logical", "copy"], GibbsConfig(), log=None)
    assert set(tables) == {(s.job.job_id, m) for s in stimuli[:3] for m in ("logical", "copy")}
    lp = tables[("job02", "logical")]
    assert lp.get(SubgoalSequence((5,), "A")) == 1.0
    assert all(0.0 <= p.probability <= 1.0 for p in predictions)


def test_shipped_paths_realise_a_list_in_the_job_style(grid, shipped):
    for stim in shipped.values():
        for k, path in enumerate(stim.paths):
            assert path[0] in grid.starts
            assert realised_lists(grid, stim, k, path), f"{stim.job.job_id} path {k}"


def test_generated_paths_realise_their_list_in_the_job_style(grid, stimuli):
    for stim in stimuli:
        for k, (path, g) in enumerate(zip(stim.paths, stim.lists_used)):
            assert g in realised_lists(grid, stim, k, path), f"{stim.job.job_id} path {k}"


def test_generation_overrides(grid, jobs):
    short = generate_exp1_stimuli(grid, 0, jobs[:3], n_paths=2)
    assert [len(s.paths) for s in short] == [2, 2, 2]
    noisy = generate_exp1_stimuli(grid, 0, jobs[:3], mode="softmax", n_paths=2)
    for stim in noisy:
        for path, g in zip(stim.paths, stim.lists_used):
            assert satisfies(grid, path, g)
    with pytest.raises(ValueError, match="paths per job"):
        generate_exp1_stimuli(grid, 0, jobs[:1], n_paths=0)


def test_shipped_job02_evidence_for_longer_lists(grid, shipped):
    stim = shipped["job02"]
    _, tables = run_exp1(grid, [stim], ["logical", "copy"], GibbsConfig(), log=None)
    lp, copy = tables[("job02", "logical")], tables[("job02", "copy")]
    assert lp.get(seq(5)) == 1.0
    longer = {g: p for g, p in lp.entries.items() if 5 in g.items and len(g.items) > 1}
    assert all(p < 1.0 for p in longer.values())
    assert sum(longer.values()) >= lp.get(seq(5))
    assert lp.get(seq(2, 5)) == lp.get(seq(5, 7)) == 0.5
    assert any(5 in g.items and len(g.items) > 1 and p == 1.0 for g, p in copy.entries.items())
    assert copy.get(seq(5)) == 0.0


def test_detour_paths_always_carry_an_addon(grid, shipped, stimuli):
    generated = next(s for s in stimuli if s.job.job_id == "job02")
    for stim in (shipped["job02"], generated):
        for path in stim.paths:
            visited = {i for i, cell in grid.item_cells.items() if cell in path}
            assert 5 in visited
            assert visited - {5}, "a path collects only the detour item"


@pytest.mark.slow
def test_crp_recovers_detour_item(grid, shipped):
    stim = shipped["job02"]
    _, tables = run_exp1(grid, [stim], ["crp"], GibbsConfig(seed=0))
    (top, p), = tables[("job02", "crp")].top(1)
    assert top == seq(5)
    assert p > 0.7


@pytest.mark.slow
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_crp_two_list_job_ranks_both_lists_first(grid, shipped, seed):
    _, tables = run_exp1(grid, [shipped["job11"]], ["crp"], GibbsConfig(seed=seed))
    ranked = tables[("job11", "crp")].top(3)
    assert {g for g, _ in ranked[:2]} == {seq(1, dest="B"), seq(3, dest="B")}
    if len(ranked) == 3:
        assert ranked[2][1] < ranked[1][1]


def prediction(job_id, items, p, model="crp"):
    return Prediction(job_id, model, items, "B", p)


def test_correlate_self_and_anti():
    preds = [prediction("j", "2", 0.9), prediction("j", "5", 0.1), prediction("j", "8", 0.5)]
    same = JudgmentTable([("j", SubgoalSequence((2,), "B"), 0.9), ("j", SubgoalSequence((5,), "B"), 0.1),
                          ("j", SubgoalSequence((8,), "B"), 0.5)])
    assert correlate(preds, same) == pytest.approx(1.0)
    anti_preds = [prediction("j", "2", 0.0), prediction("j", "5", 1.0)]
    anti = JudgmentTable([("j", SubgoalSequence((2,), "B"), 1.0), ("j", SubgoalSequence((5,), "B"), 0.0)])
    assert correlate(anti_preds, anti) == pytest.approx(-1.0)


def test_correlate_counts_missing_predictions_as_zero():
    preds = [prediction("j", "2", 1.0), prediction("j", "5", 0.5, model="copy")]
    judged = JudgmentTable([("j", SubgoalSequence((2,), "B"), 0.8), ("j", SubgoalSequence((5,), "B"), 0.2)])
    assert correlate(preds, judged, model="crp") == pytest.approx(1.0)


def test_correlate_needs_two_pairs():
    with pytest.raises(ValueError, match="at least two"):
        correlate([prediction("j", "2", 1.0)], JudgmentTable([("j", SubgoalSequence((2,), "B"), 1.0)]))


def test_judgment_proportions_checked():
    with pytest.raises(ValueError):
        JudgmentTable([("j", SubgoalSequence((2,), "B"), 1.5)])
