import dataclasses
import json

import pytest

from pegmate.errors import EmptyDatasetError, IoError, ValidationError
from pegmate.matcher import InputStrategy, OracleBackend, ReplayBackend
from pegmate.pipeline import (
    AttemptLog,
    ConfusionMatrix,
    PipelineConfig,
    RetryNesting,
    emit_report,
    make_backend,
    make_e2e_worlds,
    run_ablation,
    run_e2e,
    run_matching_experiment,
)
from pegmate.worldgen import MatchingDataset, NoiseConfig, make_matching_benchmark, make_near_tie_benchmark


@pytest.fixture(scope="module")
def fast_render():
    from pegmate.worldgen import RenderConfig
    return RenderConfig(mm_per_pixel=0.15, width=800, height=720)


@pytest.fixture(scope="module")
def noisy_run(fast_render):
    render = dataclasses.replace(fast_render, noise=NoiseConfig(centroid_bias_mm=3.0))
    cfg = PipelineConfig(render=render, yaw_flip_rate=0.5, seed=3)
    worlds = make_e2e_worlds(3, 4, seed=11)
    return cfg, worlds, run_e2e(worlds, cfg)


@pytest.fixture(scope="module")
def bench():
    return make_matching_benchmark(6, seed=4)


def test_attempt_plans():
    nested = PipelineConfig(n_id_retries=2, n_se2_retries=3)
    assert nested.attempt_plan(5) == [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2)]
    flat = dataclasses.replace(nested, nesting=RetryNesting.FLAT)
    assert flat.attempt_plan(5) == [(0, 0), (0, 1), (0, 2), (1, 0)]
    assert nested.attempt_plan(1) == [(0, 0), (0, 1), (0, 2)]
    assert PipelineConfig(n_id_retries=1, n_se2_retries=1).attempt_plan(4) == [(0, 0)]


@pytest.mark.parametrize("kwargs", [{"n_id_retries": 0}, {"n_se2_retries": 1.5}, {"backend": "gpu"},
                                    {"yaw_flip_rate": 2.0}, {"nesting": "sideways"}])
def test_config_validation(kwargs):
    with pytest.raises((ValidationError, ValueError)):
        PipelineConfig(**kwargs)


def test_attempt_log_is_append_only():
    log = AttemptLog("7")
    log.append("detect", candidates=[])
    with pytest.raises(AttributeError):
        log.records = ()
    assert isinstance(log.records, tuple)
    log.close("failure")
    with pytest.raises(ValidationError):
        log.append("insert")


def test_zero_noise_trials_succeed_first_time(fast_render):
    worlds = make_e2e_worlds(1, 4, seed=2)
    res = run_e2e(worlds, PipelineConfig(render=fast_render))
    assert res.first_attempt_successes == res.with_retry_successes == 4
    assert all(g.status == "success" for g in res.logs)


def test_retry_order_follows_rankings(noisy_run):
    cfg, _, res = noisy_run
    assert res.with_retry_successes >= res.first_attempt_successes
    retried = 0
    for log in res.logs:
        recs = log.records
        match = next(r for r in recs if r["stage"] == "match")
        yaws = {r["candidate"]: r for r in recs if r["stage"] == "yaw" and "ranking" in r}
        attempts = log.attempts()
        plan = cfg.attempt_plan(len(match["ranking"]))
        assert [(a["id_rank"], a["yaw_rank"]) for a in attempts] == plan[:len(attempts)]
        offsets = {}
        for a in attempts:
            assert a["candidate"] == match["ranking"][a["id_rank"]]
            y = yaws[a["candidate"]]
            rot = y["ranking"][a["yaw_rank"]]["rotation"]
            off = (a["pose"]["yaw"] - rot - y["theta"]) % 360.0
            prev = offsets.setdefault(a["candidate"], off)
            assert abs((off - prev + 180) % 360 - 180) < 1e-6
        if log.success:
            assert attempts[-1]["outcome"]["success"]
            assert not any(a["outcome"]["success"] for a in attempts[:-1])
        retried += len(attempts) > 1
    assert retried > 0


def test_single_attempt_reproduces_first_attempt_count(noisy_run):
    cfg, worlds, res = noisy_run
    one = run_e2e(worlds, dataclasses.replace(cfg, n_id_retries=1, n_se2_retries=1))
    assert one.with_retry_successes == res.first_attempt_successes
    assert [g.first_attempt_success for g in one.logs] == [g.first_attempt_success for g in res.logs]


def test_replay_reproduces_report(noisy_run, tmp_path):
    cfg, worlds, res = noisy_run
    again = run_e2e(worlds, cfg, ReplayBackend(res.transcript))
    emit_report({"e2e": res}, tmp_path / "a")
    emit_report({"e2e": again}, tmp_path / "b")
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_summary_counts_are_consistent(noisy_run):
    _, _, res = noisy_run
    s = res.summary()
    assert sum(s["failure_modes_final"].values()) == s["trials"] - s["with_retry_successes"]
    assert sum(s["failure_modes_first_attempt"].values()) == s["trials"] - s["first_attempt_successes"]
    assert sum(r["trials"] for r in s["per_family"].values()) == s["trials"]


def test_run_e2e_rejects_empty():
    with pytest.raises(EmptyDatasetError):
        run_e2e([])


# ---------------------------------------------------------------------------
# matching experiments


def test_confusion_matrix_invariants(bench):
    res = run_matching_experiment(bench)
    acc = res.accuracy
    assert acc["top1"] == len(bench) and acc["top1"] <= acc["top2"] <= acc["top3"]
    cm = res.confusion
    for i, row in enumerate(cm.cells):
        assert row[cm.rankings[i][0]]["rank"] == 1
    csv_rows = cm.to_csv().splitlines()
    assert len(csv_rows) == len(bench) + 1
    assert sum(line.count("*") for line in csv_rows) == len(bench)


def test_confusion_matrix_validation():
    with pytest.raises(ValidationError):
        ConfusionMatrix(["a"], ["x", "y"], [0], [[0]], [[None]], [False], [{}])
    with pytest.raises(ValidationError):
        ConfusionMatrix(["a", "b"], ["x", "y"], [0, 1], [[0, 0], [0, 1]], [[None, None]] * 2, [False] * 2, [{}] * 2)


def test_ambiguous_rows_miss_at_top1():
    cm = ConfusionMatrix(["a", "b"], ["x", "y"], [0, 1], [[0, 1], [1, 0]], [[None, None]] * 2, [True, False],
                         [{}, {}])
    assert cm.accuracy() == {"top1": 1, "top2": 2, "top3": 2}


def test_ablation_isolates_failing_strategies(bench):
    # strip the side views so the three-view strategy cannot build its prompt
    strip = lambda items: [dataclasses.replace(it, images={k: v for k, v in it.images.items() if k != "side"})
                           for it in items]
    ds = MatchingDataset(strip(bench.pegs), strip(bench.holes), bench.truth)
    res = run_ablation(ds)
    assert res.row("three_view")["error"] and res.row("three_view")["top1"] is None
    assert res.row("two_view")["top1"] == len(bench)
    assert [r["strategy"] for r in res.rows] == [s.value for s in InputStrategy]


def test_ablation_ordering_on_near_ties():
    res = run_ablation(make_near_tie_benchmark(4, seed=0))
    assert res.row("two_view")["top1"] > res.row("no_probability")["top1"]
    assert res.row("two_view")["top1"] >= res.row("cross_sectional_only")["top1"]


def test_ablation_rejects_empty():
    with pytest.raises(EmptyDatasetError):
        run_ablation(MatchingDataset([], [], []))


def test_make_backend(monkeypatch):
    assert isinstance(make_backend(PipelineConfig()), OracleBackend)
    monkeypatch.delenv("PEGMATE_VLM_URL", raising=False)
    with pytest.raises(ValidationError):
        make_backend(PipelineConfig(backend="remote"))
    monkeypatch.setenv("PEGMATE_VLM_URL", "http://127.0.0.1:9/v1")
    assert make_backend(PipelineConfig(backend="remote")).url == "http://127.0.0.1:9/v1"


# ---------------------------------------------------------------------------
# reports


def test_report_is_byte_stable(bench, tmp_path):
    results = {"matching": run_matching_experiment(bench), "ablation": run_ablation(bench)}
    m1 = emit_report(results, tmp_path / "one", {"seed": "4"})
    m2 = emit_report({"matching": run_matching_experiment(bench), "ablation": run_ablation(bench)},
                     tmp_path / "two", {"seed": "4"})
    assert m1 == m2
    names = sorted(p.name for p in (tmp_path / "one").iterdir())
    assert names == sorted(list(m1["files"]) + ["manifest.json"])
    for n in names:
        assert (tmp_path / "one" / n).read_bytes() == (tmp_path / "two" / n).read_bytes()
    manifest = json.loads((tmp_path / "one" / "manifest.json").read_text())
    assert manifest["inputs"] == {"seed": "4"}
    svg = (tmp_path / "one" / "matching_topk.svg").read_text()
    assert svg.startswith("<svg") and svg.count("<rect") >= 3


def test_report_write_failure(bench, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(IoError):
        emit_report({"summary": {"a": 1}}, blocker / "sub")
    with pytest.raises(ValidationError):
        emit_report({}, tmp_path / "empty")
    with pytest.raises(ValidationError):
        emit_report({"x": object()}, tmp_path / "bad")
