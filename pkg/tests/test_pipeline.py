"""Stage orchestration: probe archives and resume, file formats, stage
isolation, end-to-end determinism, sweeps, and report aggregation.

Most tests run against the committed fixture set in tests/fixtures/e2e, which
replays scripted generations through the mock backend; a few build tiny
in-memory scripts to drive closed-loop cases.
"""

import json
import threading
from dataclasses import replace
from pathlib import Path

import pytest

import apie.pipeline as pipeline
from apie.errors import ConfigError, DataError, IncompleteArchive, ManifestDigestMismatch, SelectionError
from apie.gateway import SCRIPTED_MOCK, BackendDescriptor, Gateway, ScriptedMockBackend, prompt_digest
from apie.model import RunConfig, load_samples, load_schema, validate_config
from apie.parsing import serialize_extractions
from apie.pipeline import (
    cmd_eval,
    cmd_infer,
    cmd_probe,
    cmd_report,
    cmd_score,
    cmd_score_select,
    cmd_select,
    cmd_sweep,
    config_digest,
    render_report_table,
    render_sweep_table,
    run_full,
)
from apie.prompting import PromptTemplate, load_exemplars

E2E = Path(__file__).parent / "fixtures" / "e2e"


@pytest.fixture()
def e2e():
    pool = load_samples(E2E / "pool.jsonl", split="pool")
    test = load_samples(E2E / "test.jsonl", split="test")
    schema = load_schema(E2E / "schema.json")
    template = PromptTemplate.default()
    exemplars = load_exemplars(E2E / "seed_exemplars.jsonl")
    return pool, test, schema, template, exemplars


def e2e_config(tmp_path, **overrides) -> RunConfig:
    desc = BackendDescriptor(kind=SCRIPTED_MOCK, model="mock-extractor",
                             fixture_path=str(E2E / "mock_fixture.jsonl"))
    base = {"backend": desc, "cache_dir": str(tmp_path / "cache")}
    base.update(overrides)
    return validate_config(RunConfig(**base))


class CountingBackend:
    """Wraps the scripted mock and counts sends per prompt digest."""

    def __init__(self, desc):
        self.inner = ScriptedMockBackend(desc)
        self.sends = {}
        self._lock = threading.Lock()

    def send(self, req):
        with self._lock:
            self.sends[prompt_digest(req.prompt)] = (
                self.sends.get(prompt_digest(req.prompt), 0) + 1)
        return self.inner.send(req)

    @property
    def total(self):
        return sum(self.sends.values())


def counting_gateway(cfg):
    backend = CountingBackend(cfg.backend)
    return Gateway(cfg, backend=backend), backend


class TestProbe:
    def test_archive_shape(self, tmp_path, e2e):
        pool, _, schema, template, exemplars = e2e
        cfg = e2e_config(tmp_path)
        result = cmd_probe(tmp_path / "run", cfg, pool, schema, template, exemplars)
        assert result["probed"] == 12
        assert result["new"] == 12

        lines = (tmp_path / "run" / "probes.jsonl").read_text().splitlines()
        assert len(lines) == 12
        entry = json.loads(lines[0])
        assert set(entry) == {"id", "generations", "outcomes"}
        assert entry["id"] == pool[0].id
        assert len(entry["generations"]) == cfg.k
        assert all(o["status"] in ("valid", "fail") for o in entry["outcomes"])

        meta = json.loads((tmp_path / "run" / "probe_meta.json").read_text())
        assert meta["k"] == 3
        assert meta["pool_ids"] == [s.id for s in pool]

    def test_rerun_skips_probed_samples(self, tmp_path, e2e):
        pool, _, schema, template, exemplars = e2e
        cfg = e2e_config(tmp_path)
        run = tmp_path / "run"
        cmd_probe(run, cfg, pool, schema, template, exemplars)

        gw, backend = counting_gateway(cfg)
        result = cmd_probe(run, cfg, pool, schema, template, exemplars, gateway=gw)
        assert result["new"] == 0
        assert backend.total == 0

    def test_interrupted_archive_resumes_missing_only(self, tmp_path, e2e):
        pool, _, schema, template, exemplars = e2e
        cfg = e2e_config(tmp_path)
        run = tmp_path / "run"
        cmd_probe(run, cfg, pool, schema, template, exemplars)

        probes = run / "probes.jsonl"
        lines = probes.read_text().splitlines()
        probes.write_text("\n".join(lines[:7]) + "\n")

        cfg2 = e2e_config(tmp_path, cache_dir=str(tmp_path / "cache2"))
        gw, backend = counting_gateway(cfg2)
        result = cmd_probe(run, cfg2, pool, schema, template, exemplars, gateway=gw)
        assert result["new"] == 5
        assert backend.total == 5 * cfg.k
        assert len(probes.read_text().splitlines()) == 12

    def test_torn_trailing_line_is_reprobed(self, tmp_path, e2e):
        pool, _, schema, template, exemplars = e2e
        cfg = e2e_config(tmp_path)
        run = tmp_path / "run"
        cmd_probe(run, cfg, pool, schema, template, exemplars)

        probes = run / "probes.jsonl"
        lines = probes.read_text().splitlines()
        torn = lines[-1][: len(lines[-1]) // 2]
        probes.write_text("\n".join(lines[:-1]) + "\n" + torn)

        cfg2 = e2e_config(tmp_path, cache_dir=str(tmp_path / "cache2"))
        result = cmd_probe(run, cfg2, pool, schema, template, exemplars)
        assert result["new"] == 1
        entries = [json.loads(l) for l in probes.read_text().splitlines()]
        assert [e["id"] for e in entries] == [s.id for s in pool]

    def test_corrupt_middle_line_is_an_error(self, tmp_path, e2e):
        pool, _, schema, template, exemplars = e2e
        cfg = e2e_config(tmp_path)
        run = tmp_path / "run"
        cmd_probe(run, cfg, pool, schema, template, exemplars)

        probes = run / "probes.jsonl"
        lines = probes.read_text().splitlines()
        lines[4] = lines[4][:30]
        probes.write_text("\n".join(lines) + "\n")
        with pytest.raises(DataError, match="corrupt probe archive"):
            cmd_probe(run, cfg, pool, schema, template, exemplars)

    def test_k_change_discards_archive(self, tmp_path, e2e):
        pool, _, schema, template, exemplars = e2e
        cfg = e2e_config(tmp_path)
        run = tmp_path / "run"
        cmd_probe(run, cfg, pool, schema, template, exemplars)

        cfg5 = e2e_config(tmp_path, k=5, cache_dir=str(tmp_path / "cache5"))
        gw, backend = counting_gateway(cfg5)
        result = cmd_probe(run, cfg5, pool, schema, template, exemplars, gateway=gw)
        assert result["new"] == 12
        assert backend.total == 12 * 5
        entry = json.loads((run / "probes.jsonl").read_text().splitlines()[0])
        assert len(entry["generations"]) == 5

    def test_pool_change_discards_archive(self, tmp_path, e2e):
        pool, _, schema, template, exemplars = e2e
        cfg = e2e_config(tmp_path)
        run = tmp_path / "run"
        cmd_probe(run, cfg, pool, schema, template, exemplars)
        shrunk = pool[:6]
        result = cmd_probe(run, cfg, shrunk, schema, template, exemplars)
        assert result["new"] == 6
        assert len((run / "probes.jsonl").read_text().splitlines()) == 6

    def test_config_digest_ignores_weights(self, tmp_path, e2e):
        _, _, schema, template, exemplars = e2e
        cfg = e2e_config(tmp_path)
        reweighted = validate_config(replace(cfg, alpha=0.3, beta=0.5, gamma=0.2))
        assert (config_digest(cfg, schema, template, exemplars)
                == config_digest(reweighted, schema, template, exemplars))
        assert (config_digest(cfg, schema, template, exemplars)
                != config_digest(replace(cfg, k=5), schema, template, exemplars))


class TestScoreSelect:
    def test_scores_file_in_pool_order(self, tmp_path, e2e):
        pool, _, schema, template, exemplars = e2e
        cfg = e2e_config(tmp_path)
        run = tmp_path / "run"
        cmd_probe(run, cfg, pool, schema, template, exemplars)
        scores = cmd_score(run, cfg, pool)
        assert [s.sample_id for s in scores] == [s.id for s in pool]

        rows = [json.loads(l) for l in (run / "scores.jsonl").read_text().splitlines()]
        assert [r["id"] for r in rows] == [s.id for s in pool]
        assert list(rows[0]) == ["id", "u_d_raw", "r_fail", "s_dis", "u_f_raw",
                                 "u_c_raw", "k_valid", "u_d", "u_f", "u_c", "u_total"]

    def test_missing_archive_is_incomplete(self, tmp_path, e2e):
        pool, _, _, _, _ = e2e
        cfg = e2e_config(tmp_path)
        with pytest.raises(IncompleteArchive):
            cmd_score(tmp_path / "nothing", cfg, pool)

    def test_partial_archive_is_incomplete(self, tmp_path, e2e):
        pool, _, schema, template, exemplars = e2e
        cfg = e2e_config(tmp_path)
        run = tmp_path / "run"
        cmd_probe(run, cfg, pool, schema, template, exemplars)
        probes = run / "probes.jsonl"
        probes.write_text("\n".join(probes.read_text().splitlines()[:8]) + "\n")
        with pytest.raises(IncompleteArchive, match="missing 4 of 12"):
            cmd_score(run, cfg, pool)

    def test_different_pool_rejected(self, tmp_path, e2e):
        pool, _, schema, template, exemplars = e2e
        cfg = e2e_config(tmp_path)
        run = tmp_path / "run"
        cmd_probe(run, cfg, pool, schema, template, exemplars)
        renamed = [replace(s, id=s.id + "x") for s in pool]
        with pytest.raises(DataError, match="differs"):
            cmd_score(run, cfg, renamed)

    def test_select_without_scores_fails_for_apie(self, tmp_path, e2e):
        pool, _, _, _, _ = e2e
        cfg = e2e_config(tmp_path)
        with pytest.raises(SelectionError, match="needs uncertainty scores"):
            cmd_select(tmp_path / "run", cfg, pool, 3)

    def test_score_select_never_builds_a_gateway(self, tmp_path, e2e, monkeypatch):
        pool, _, schema, template, exemplars = e2e
        cfg = e2e_config(tmp_path)
        run = tmp_path / "run"
        cmd_probe(run, cfg, pool, schema, template, exemplars)

        def explode(*args, **kwargs):
            raise AssertionError("scoring/selection must not construct a Gateway")

        monkeypatch.setattr(pipeline, "Gateway", explode)
        selection = cmd_score_select(run, cfg, pool, 3)
        assert len(selection.selected_ids) == 3

    def test_selection_manifest_round_trip(self, tmp_path, e2e):
        pool, _, schema, template, exemplars = e2e
        cfg = e2e_config(tmp_path)
        run = tmp_path / "run"
        cmd_probe(run, cfg, pool, schema, template, exemplars)
        selection = cmd_score_select(run, cfg, pool, 3)
        stored = json.loads((run / "selection.json").read_text())
        assert stored["selected_ids"] == list(selection.selected_ids)
        assert stored["strategy"] == "apie"
        assert stored["weights"] == {"alpha": 0.8, "beta": 0.1, "gamma": 0.1}


class SpyBackend:
    """Answers every prompt with a scripted value and keeps the prompts."""

    def __init__(self, answer):
        self.answer = answer
        self.prompts = []
        self._lock = threading.Lock()

    def send(self, req):
        with self._lock:
            self.prompts.append(req.prompt)
        return self.answer(req.prompt) if callable(self.answer) else self.answer


def spy_gateway(cfg, answer):
    backend = SpyBackend(answer)
    return Gateway(cfg, backend=backend), backend


class TestInferEval:
    def seeded_run(self, tmp_path, e2e, **overrides):
        pool, test, schema, template, exemplars = e2e
        cfg = e2e_config(tmp_path, **overrides)
        run = tmp_path / "run"
        cmd_probe(run, cfg, pool, schema, template, exemplars)
        cmd_score_select(run, cfg, pool, 3)
        return run, cfg, pool, test, schema, template

    def test_predictions_file_shape(self, tmp_path, e2e):
        run, cfg, pool, test, schema, template = self.seeded_run(tmp_path, e2e)
        predictions = cmd_infer(run, cfg, pool, test, schema, template)
        assert set(predictions) == {s.id for s in test}
        rows = [json.loads(l) for l in (run / "predictions.jsonl").read_text().splitlines()]
        assert [r["id"] for r in rows] == [s.id for s in test]
        assert all(set(r) == {"id", "raw", "outcome"} for r in rows)

    def test_eval_reports_hand_derived_totals(self, tmp_path, e2e):
        # from the committed response table: t01..t04 exact, t05 one wrong
        # surface, t06 unparseable
        run, cfg, pool, test, schema, template = self.seeded_run(tmp_path, e2e)
        cmd_infer(run, cfg, pool, test, schema, template)
        reports = cmd_eval(run, cfg, test, schema)

        ner = reports["ner"]
        assert (ner.tp, ner.fp, ner.fn) == (10, 1, 3)
        assert ner.f1 == pytest.approx(2 * 10 / (2 * 10 + 1 + 3))
        re_report = reports["re"]
        assert (re_report.tp, re_report.fp, re_report.fn) == (3, 1, 2)
        assert re_report.f1 == pytest.approx(2 * 3 / (2 * 3 + 1 + 2))

        stored = json.loads((run / "report.json").read_text())
        assert set(stored) == {"ner", "re"}
        by_id = {row["id"]: row for row in stored["ner"]["per_sample"]}
        assert by_id["t06"]["parse_failed"] is True
        assert by_id["t01"]["parse_failed"] is False

    def test_exemplars_enter_prompt_most_uncertain_last(self, tmp_path, e2e):
        run, cfg, pool, test, schema, template = self.seeded_run(tmp_path, e2e)
        selection = json.loads((run / "selection.json").read_text())
        gw, backend = spy_gateway(cfg, "[]")
        cmd_infer(run, cfg, pool, test, schema, template, gateway=gw)

        texts = {s.id: s.text for s in pool}
        prompt = backend.prompts[0]
        positions = [prompt.index(texts[sid]) for sid in selection["selected_ids"]]
        # selection order is most-uncertain first; the prompt reverses it
        assert positions == sorted(positions, reverse=True)
        assert prompt.rindex("Input:") > max(positions)

    def test_manifest_records_artifact_digests(self, tmp_path, e2e):
        run, cfg, pool, test, schema, template = self.seeded_run(tmp_path, e2e)
        cmd_infer(run, cfg, pool, test, schema, template)
        cmd_eval(run, cfg, test, schema)
        manifest = json.loads((run / "manifest.json").read_text())
        assert manifest["strategy"] == "apie"
        for name in ("probes.jsonl", "scores.jsonl", "selection.json",
                     "predictions.jsonl", "report.json"):
            entry = manifest["artifacts"][name]
            assert entry["sha256"] == pipeline.sha256_file(run / name)
        assert manifest["f1"]["ner"] == json.loads(
            (run / "report.json").read_text())["ner"]["f1"]

    def test_infer_without_selection_fails(self, tmp_path, e2e):
        pool, test, schema, template, _ = e2e
        cfg = e2e_config(tmp_path)
        with pytest.raises(DataError, match="selection"):
            cmd_infer(tmp_path / "empty", cfg, pool, test, schema, template)

    def test_eval_without_predictions_fails(self, tmp_path, e2e):
        _, test, schema, _, _ = e2e
        cfg = e2e_config(tmp_path)
        with pytest.raises(DataError, match="predictions"):
            cmd_eval(tmp_path / "empty", cfg, test, schema)


def scripted_answer(samples):
    """Map a prompt back to its target sample and answer with its gold."""
    by_text = {s.text: s for s in samples}

    def answer(prompt):
        target = prompt.rsplit("Input: ", 1)[1].rsplit("\nOutput:", 1)[0]
        return serialize_extractions(by_text[target].gold)

    return answer


class TestClosedLoop:
    def test_gold_echo_reaches_perfect_f1(self, tmp_path, e2e):
        pool, test, schema, template, exemplars = e2e
        cfg = e2e_config(tmp_path)
        gw, _ = spy_gateway(cfg, scripted_answer(pool + test))
        reports = run_full(tmp_path / "run", cfg, pool, test, schema, template,
                           exemplars, n=3, gateway=gw)
        assert reports["ner"].f1 == 1.0
        assert reports["re"].f1 == 1.0
        assert reports["ner"].fp == 0 and reports["ner"].fn == 0

    def test_all_malformed_scores_zero_and_flags_every_sample(self, tmp_path, e2e):
        pool, test, schema, template, exemplars = e2e
        cfg = e2e_config(tmp_path)
        gw, _ = spy_gateway(cfg, "no structured output today")
        reports = run_full(tmp_path / "run", cfg, pool, test, schema, template,
                           exemplars, n=3, gateway=gw)
        assert reports["ner"].f1 == 0.0
        assert reports["re"].f1 == 0.0
        assert all(s.parse_failed for s in reports["ner"].per_sample)

    def test_zsl_prompt_has_no_exemplar_blocks(self, tmp_path, e2e):
        pool, test, schema, template, exemplars = e2e
        cfg = e2e_config(tmp_path, strategy="zsl")
        gw, backend = spy_gateway(cfg, "[]")
        run_full(tmp_path / "run", cfg, pool, test, schema, template,
                 exemplars, n=3, strategy="zsl", gateway=gw)
        final_prompts = backend.prompts[12 * cfg.k:]
        assert len(final_prompts) == len(test)
        # only the target block contributes an Input: line in zero-shot form
        assert all(p.count("Input:") == 1 for p in final_prompts)


class TestDeterminism:
    def test_two_runs_produce_identical_artifact_bytes(self, tmp_path, e2e):
        pool, test, schema, template, exemplars = e2e
        artifacts = ("probes.jsonl", "scores.jsonl", "selection.json",
                     "predictions.jsonl", "report.json")
        contents = []
        for name in ("one", "two"):
            cfg = e2e_config(tmp_path, cache_dir=str(tmp_path / f"cache-{name}"))
            run = tmp_path / name
            run_full(run, cfg, pool, test, schema, template, exemplars, n=3)
            contents.append({a: (run / a).read_bytes() for a in artifacts})
        assert contents[0] == contents[1]

    def test_warm_cache_rerun_sends_nothing(self, tmp_path, e2e):
        pool, test, schema, template, exemplars = e2e
        cfg = e2e_config(tmp_path)
        run_full(tmp_path / "one", cfg, pool, test, schema, template, exemplars, n=3)

        gw, backend = counting_gateway(cfg)
        run_full(tmp_path / "two", cfg, pool, test, schema, template,
                 exemplars, n=3, gateway=gw)
        assert backend.total == 0
        assert gw.stats["cache_hits"] == 12 * cfg.k + len(test)


class TestSweep:
    def test_grid_rows_cover_both_grids(self, tmp_path, e2e):
        pool, test, schema, template, exemplars = e2e
        cfg = e2e_config(tmp_path)
        sweep = cmd_sweep(tmp_path / "sweep", cfg, pool, test, schema, template,
                          exemplars, n=3,
                          grid_k=[2, 3, 5],
                          grid_weights=[(0.33, 0.33, 0.33), (0.3, 0.5, 0.2),
                                        (0.5, 0.2, 0.3)])
        rows = sweep["rows"]
        assert [r["grid_point"] for r in rows] == [
            "k=2", "k=3", "k=5",
            "weights=0.33/0.33/0.33", "weights=0.3/0.5/0.2", "weights=0.5/0.2/0.3"]
        assert all(r["model"] == "mock-extractor" for r in rows)
        assert all("ner_f1" in r and "re_f1" in r for r in rows)
        assert all("error" not in r for r in rows)

        stored = json.loads((tmp_path / "sweep" / "sweep.json").read_text())
        assert stored["rows"] == rows
        table = render_sweep_table(sweep)
        assert table.splitlines()[0].startswith("model\tgrid_point")
        assert len(table.splitlines()) == 1 + len(rows)

    def test_failed_point_is_recorded_not_fatal(self, tmp_path, e2e):
        pool, test, schema, template, exemplars = e2e
        cfg = e2e_config(tmp_path)
        sweep = cmd_sweep(tmp_path / "sweep", cfg, pool, test, schema, template,
                          exemplars, n=3,
                          grid_k=[3],
                          grid_weights=[(0.0, 0.0, 0.0)])
        ok_row, bad_row = sweep["rows"]
        assert "ner_f1" in ok_row
        assert "error" in bad_row and "ner_f1" not in bad_row

    def test_empty_grid_rejected(self, tmp_path, e2e):
        pool, test, schema, template, exemplars = e2e
        cfg = e2e_config(tmp_path)
        with pytest.raises(SelectionError, match="at least one"):
            cmd_sweep(tmp_path / "sweep", cfg, pool, test, schema, template,
                      exemplars, n=3)


class TestReport:
    def two_manifests(self, tmp_path, e2e):
        pool, test, schema, template, exemplars = e2e
        paths = []
        for strategy in ("apie", "rsl"):
            cfg = e2e_config(tmp_path, strategy=strategy,
                             cache_dir=str(tmp_path / "cache"))
            run = tmp_path / strategy
            run_full(run, cfg, pool, test, schema, template, exemplars, n=3,
                     strategy=strategy)
            paths.append(run / "manifest.json")
        return paths

    def test_groups_runs_by_strategy(self, tmp_path, e2e):
        paths = self.two_manifests(tmp_path, e2e)
        report = cmd_report(paths)
        assert report["runs"] == 2
        assert set(report["groups"]) == {"apie", "rsl"}
        apie_ner = report["groups"]["apie"]["ner"]
        assert apie_ner["runs"] == 1
        assert apie_ner["min"] == apie_ner["max"] == apie_ner["mean"]
        assert apie_ner["stddev"] == 0.0
        table = render_report_table(report)
        assert "apie\tner\t1" in table

    def test_aggregates_repeat_runs(self, tmp_path, e2e):
        pool, test, schema, template, exemplars = e2e
        paths = []
        for seed in (0, 1):
            cfg = e2e_config(tmp_path, seed=seed,
                             cache_dir=str(tmp_path / "cache"), strategy="rsl")
            run = tmp_path / f"seed{seed}"
            gw, _ = spy_gateway(cfg, scripted_answer(pool + test))
            run_full(run, cfg, pool, test, schema, template, exemplars, n=3,
                     strategy="rsl", gateway=gw)
            paths.append(run / "manifest.json")
        report = cmd_report(paths)
        group = report["groups"]["rsl"]["ner"]
        assert group["runs"] == 2
        assert group["mean"] == pytest.approx(1.0)

    def test_tampered_artifact_is_detected(self, tmp_path, e2e):
        paths = self.two_manifests(tmp_path, e2e)
        scores = paths[0].parent / "scores.jsonl"
        scores.write_text(scores.read_text() + "\n")
        with pytest.raises(ManifestDigestMismatch):
            cmd_report(paths)

    def test_missing_artifact_is_detected(self, tmp_path, e2e):
        paths = self.two_manifests(tmp_path, e2e)
        (paths[1].parent / "predictions.jsonl").unlink()
        with pytest.raises(ManifestDigestMismatch, match="missing"):
            cmd_report(paths)

    def test_no_manifests_rejected(self):
        with pytest.raises(DataError):
            cmd_report([])


class TestStrategiesEndToEnd:
    @pytest.mark.parametrize("strategy", ["apie", "zsl", "rsl", "kd_sort",
                                          "active_prompt"])
    def test_every_strategy_completes_on_the_fixture(self, tmp_path, e2e, strategy):
        pool, test, schema, template, exemplars = e2e
        cfg = e2e_config(tmp_path, strategy=strategy)
        reports = run_full(tmp_path / "run", cfg, pool, test, schema, template,
                           exemplars, n=3, strategy=strategy)
        assert 0.0 <= reports["ner"].f1 <= 1.0
        stored = json.loads((tmp_path / "run" / "selection.json").read_text())
        assert stored["strategy"] == strategy
