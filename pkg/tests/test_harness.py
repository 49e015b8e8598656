import csv
import json

import pytest

from faceless.corpus import GeneratorConfig
from faceless.errors import ConfigError, EvaluationError, StageError
from faceless.harness import (
    ExperimentConfig,
    ExperimentResult,
    QueryRecord,
    Workbench,
    emit_report,
    evaluate,
    load_results,
    run_scenario,
)
from faceless.harness.pipeline import _Views
from faceless.harness.report import CSV_COLUMNS, plot_data
from faceless.pairwise import MatcherConfig
from faceless.unary import TrainConfig


@pytest.fixture(scope="module")
def base():
    return ExperimentConfig(generator=GeneratorConfig(n_identities=20, instances_per_identity=20),
                            pretrain_identities=40, unary=TrainConfig(epochs=60),
                            matcher=MatcherConfig(pretrain_steps=300, finetune_steps=150))


@pytest.fixture(scope="module")
def bench():
    return Workbench()


def run(base, bench, **kw):
    return run_scenario(base.replace(**kw), bench)


def test_s0_is_fully_identified(base, bench):
    for mode in ("unary_only", "joint_tree"):
        assert run(base, bench, scenario="S0", mode=mode).accuracy == 1.0


def test_s2_s3_variants_share_unary_accuracy(base, bench):
    accs = {s: run(base, bench, scenario=s, mode="unary_only").accuracy for s in ("S2", "S3", "S3p", "S3pp")}
    assert accs["S2"] == accs["S3"] == accs["S3p"] == accs["S3pp"]


def test_more_tags_help(base, bench):
    lo = run(base, bench, scenario="S1", tau=1.25, mode="unary_only").accuracy
    hi = run(base, bench, scenario="S1", tau=5.0, mode="unary_only").accuracy
    assert hi >= lo


def test_determinism_and_cache_neutrality(base, bench):
    cfg = base.replace(scenario="S2", mode="joint_tree")
    shared = run_scenario(cfg, bench)
    fresh_a = run_scenario(cfg, Workbench())
    fresh_b = run_scenario(cfg, Workbench())
    assert fresh_a.to_json() == fresh_b.to_json() == shared.to_json()


def test_result_contract(base, bench):
    cfg = base.replace(scenario="S1", tau=2.5, mode="joint_tree", trace=True)
    r = run_scenario(cfg, bench)
    assert r.config == cfg.to_dict()
    assert r.accuracy == sum(x.predicted == x.true_identity for x in r.records) / len(r.records)
    assert 0.0 <= r.eer_accuracy <= 1.0
    assert set(r.timings) >= {"corpus", "unary", "pairwise", "inference"}
    assert all(rec.trace["mode"] == "joint_tree" for rec in r.records)
    assert r.graph["full_edge_count"] == r.graph["nodes"] * (r.graph["nodes"] - 1) // 2


@pytest.mark.parametrize("scenario", ["S1", "S2", "S3"])
def test_oracle_pairwise_never_hurts(base, bench, scenario):
    unary = run(base, bench, scenario=scenario, mode="unary_only").accuracy
    oracle = run(base, bench, scenario=scenario, mode="joint_oracle")
    assert oracle.accuracy >= unary
    assert oracle.graph["after_negative_pruning"] == oracle.graph["after_album_pruning"]


def test_oracle_strictly_helps_with_tagged_clique_mates(base, bench):
    unary = run(base, bench, scenario="S1", tau=1.25, mode="unary_only")
    oracle = run(base, bench, scenario="S1", tau=1.25, mode="joint_oracle")
    assert unary.accuracy < 1.0
    assert oracle.accuracy > unary.accuracy


def test_joint_within_one_point_of_unary(base, bench):
    for scenario in ("S1", "S3"):
        unary = run(base, bench, scenario=scenario, mode="unary_only").accuracy
        joint = run(base, bench, scenario=scenario, mode="joint_tree").accuracy
        assert joint >= unary - 0.01


def test_maxproduct_and_s2_paths_run(base, bench):
    for scenario in ("S1", "S2"):
        r = run(base, bench, scenario=scenario, mode="joint_maxproduct", trace=True)
        assert len(r.records) == len({rec.query_id for rec in r.records}) > 0
        assert all("converged" in rec.trace for rec in r.records)


def test_adapted_unary_regime(base, bench):
    cfg = base.replace(scenario="S3", obfuscation="blur")
    corpus = bench.corpus(cfg)
    splits = bench.splits(cfg, corpus)
    tags = bench.tags(cfg, corpus, splits)
    from faceless.corpus import plan_obfuscation
    plan = plan_obfuscation("S3", splits, tags, obfuscation=cfg.head_obfuscation)
    views = _Views(cfg, bench, corpus, tags, plan, cfg.head_obfuscation, ("k",))
    assert views.unary_model(True).trained_on == "blur"
    assert views.unary_model(False).trained_on == "blur"  # tags are obfuscated too


def test_config_validation(base):
    with pytest.raises(ConfigError):
        base.replace(scenario="S3", obfuscation="visible")
    with pytest.raises(ConfigError):
        base.replace(mode="joint_everything")
    with pytest.raises(ConfigError):
        base.replace(tau=0)
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"scenario": "S1", "bogus": 1})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"pruning": {"beta": 2.0}})
    assert base.replace(scenario="S1", obfuscation="black").head_obfuscation.visible
    assert base.replace(mode="joint_oracle").effective_beta == 0.0


def test_config_roundtrip(tmp_path, base):
    cfg = base.replace(scenario="S3'", obfuscation="white", domain="across", mode="joint_maxproduct")
    assert cfg.scenario == "S3p"
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert ExperimentConfig.load(path) == cfg


def test_stage_errors_name_the_stage(tmp_path, base):
    cfg = base.replace(corpus_path=str(tmp_path / "missing.jsonl"), generator=None)
    with pytest.raises(StageError, match="corpus") as err:
        run_scenario(cfg)
    assert err.value.exit_code == 3


def _result(records, naive=0.25):
    acc = sum(r.predicted == r.true_identity for r in records) / len(records)
    return ExperimentResult({"scenario": "S1", "tau": 10.0, "obfuscation": "black", "domain": "within",
                             "mode": "unary_only"}, records, acc, naive, None, {"nodes": 4}, {"unary": 0.5})


def test_evaluate_metrics():
    recs = [QueryRecord(f"q{k}", "a0" if k < 2 else "a1", t, t, "unary_only") for k, t in enumerate("abcd")]
    m = evaluate(_result(recs))
    assert m["accuracy"] == 1.0 and m["chance_multiple"] == 4.0
    assert m["per_album"] == {"a0": 1.0, "a1": 1.0}
    popular = [QueryRecord(f"q{k}", "a0", t, "a", "unary_only") for k, t in enumerate("aabc")]
    assert evaluate(_result(popular, naive=0.5))["accuracy"] == 0.5
    with pytest.raises(EvaluationError):
        evaluate(ExperimentResult({}, [], 0.0, 0.0, None, {}))


def test_report_csv_json_and_plot(tmp_path, base, bench):
    results = [run(base, bench, scenario="S1", tau=t, mode="unary_only") for t in (1.25, 2.5, 5.0, 10.0)]
    emit_report(results[:2], tmp_path / "r.csv", "csv")
    rows = list(csv.reader(open(tmp_path / "r.csv")))
    assert tuple(rows[0]) == CSV_COLUMNS and len(rows) == 3
    emit_report(results, tmp_path / "r.json", "json")
    back = load_results(tmp_path / "r.json")
    assert [r.accuracy for r in back] == [r.accuracy for r in results]
    assert [r.to_json() for r in back] == [r.to_json() for r in results]
    plot = json.loads((tmp_path / "r.plot.json").read_text())
    assert plot["x_label"] == "tau" and plot["x"] == [1.25, 2.5, 5.0, 10.0]
    assert all(len(v) == 4 for v in plot["series"].values())


def test_plot_over_scenarios(base, bench):
    results = [run(base, bench, scenario=s, mode="unary_only") for s in ("S1", "S2", "S3")]
    assert plot_data(results)["x"] == ["S1", "S2", "S3"]


def test_report_bad_format_and_path(tmp_path):
    from faceless.harness.report import ReportError
    r = _result([QueryRecord("q", "a", "x", "x", "unary_only")])
    with pytest.raises(ReportError):
        emit_report([r], tmp_path / "r.txt", "xml")
    with pytest.raises(ReportError, match="nope"):
        emit_report([r], tmp_path / "nope" / "r.csv", "csv")
