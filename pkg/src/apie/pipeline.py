"""Stage orchestration: probe, score/select, infer/eval, sweeps, reports.

Every stage reads and writes plain files in a run directory so runs are
diffable, resumable, and portable:

    probe_meta.json    probe configuration digest + pool identity
    probes.jsonl       {"id", "generations", "outcomes"} per pool sample
    scores.jsonl       uncertainty score rows, pool order
    selection.json     selection manifest
    predictions.jsonl  {"id", "raw", "outcome"} per test sample
    report.json        {"ner": {...}, "re": {...}} strict-match reports
    manifest.json      run summary with artifact digests and cache stats

Scoring and selection never touch the network; only probe and infer talk to
the backend. The probe archive is keyed by a config digest that covers
everything influencing generations (k, temperature, seed, backend, schema,
template, seed exemplars) and deliberately excludes the scoring weights, so
weight sweeps reuse probes unchanged.
"""

from __future__ import annotations

import hashlib
import json
import logging
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

from .errors import (
    DataError,
    IncompleteArchive,
    ManifestDigestMismatch,
    SelectionError,
)
from .evaluation import EvalReport, evaluate_run
from .gateway import Gateway
from .model import RunConfig, Sample, SchemaSpec, UncertaintyScores, validate_config
from .parsing import ParseOutcome, parse_output
from .prompting import Exemplar, PromptTemplate, build_prompt
from .selection import (
    SelectionResult,
    exemplar_prompt_order,
    resolve_labels,
    run_strategy,
)
from .uncertainty import ProbeSet, score_pool

log = logging.getLogger(__name__)

PROBE_META = "probe_meta.json"
PROBES = "probes.jsonl"
SCORES = "scores.jsonl"
SELECTION = "selection.json"
PREDICTIONS = "predictions.jsonl"
REPORT = "report.json"
MANIFEST = "manifest.json"


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def dumps_line(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def pool_digest(pool: list[Sample]) -> str:
    material = [[s.id, s.text] for s in pool]
    return sha256_text(json.dumps(material, ensure_ascii=False))


def config_digest(
    cfg: RunConfig,
    schema: SchemaSpec,
    template: PromptTemplate,
    seed_exemplars: list[Exemplar],
) -> str:
    """Covers everything that can change a generation; scoring weights are
    intentionally absent so re-weighting reuses the same probe archive."""
    material = {
        "k": cfg.k,
        "temperature": cfg.temperature,
        "seed": cfg.seed,
        "backend_kind": cfg.backend.kind if cfg.backend else None,
        "model": cfg.backend.model if cfg.backend else None,
        "schema": schema.to_obj(),
        "template": [template.task_definition, template.schema_block,
                     template.exemplar_block, template.target_block],
        "seed_exemplars": [ex.to_obj() for ex in seed_exemplars],
        "probe_exemplars": cfg.probe_exemplars,
        "strict_payload": cfg.strict_payload,
        "case_fold": cfg.case_fold,
        "normalize_levenshtein_per_pair": cfg.normalize_levenshtein_per_pair,
    }
    return sha256_text(json.dumps(material, ensure_ascii=False, sort_keys=True))


def _read_probe_lines(path: Path) -> list[dict]:
    """Parse the probe archive, tolerating one torn line at the tail (a probe
    run interrupted mid-write); corruption anywhere else is an error."""
    if not path.exists():
        return []
    lines = path.read_text(encoding="utf-8").splitlines()
    entries: list[dict] = []
    for index, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            entries.append(json.loads(line))
        except ValueError as exc:
            if index == len(lines) - 1:
                log.warning("dropping torn trailing probe line: %s", exc)
                continue
            raise DataError(f"{path}:{index + 1}: corrupt probe archive: {exc}") from exc
    return entries


def cmd_probe(
    run_dir: str | Path,
    cfg: RunConfig,
    pool: list[Sample],
    schema: SchemaSpec,
    template: PromptTemplate,
    seed_exemplars: list[Exemplar],
    gateway: Gateway | None = None,
) -> dict:
    """Generate k outputs per pool sample and persist them with their parse
    outcomes. Resumable: a rerun under the same config digest skips samples
    already probed; any config change forces a fresh archive."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    digest = config_digest(cfg, schema, template, seed_exemplars)
    meta_path = run_dir / PROBE_META
    probes_path = run_dir / PROBES

    done: dict[str, dict] = {}
    if meta_path.exists():
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        if meta.get("config_digest") == digest and meta.get("pool_digest") == pool_digest(pool):
            entries = _read_probe_lines(probes_path)
            done = {e["id"]: e for e in entries}
            if entries:
                # rewrite so a torn tail never survives into the archive
                write_atomic(probes_path,
                             "".join(dumps_line(e) + "\n" for e in entries))
        else:
            log.info("probe config changed, discarding previous archive")
            probes_path.unlink(missing_ok=True)

    meta = {
        "config_digest": digest,
        "pool_digest": pool_digest(pool),
        "pool_ids": [s.id for s in pool],
        "k": cfg.k,
        "created_at": time.time(),
    }
    write_atomic(meta_path, json.dumps(meta, indent=2) + "\n")

    pending = [s for s in pool if s.id not in done]
    if pending:
        gw = gateway if gateway is not None else Gateway(cfg)

        def probe_one(sample: Sample) -> dict:
            prompt = build_prompt(sample, seed_exemplars, template, schema)
            generations = gw.generate_k(prompt, cfg.k)
            outcomes = [
                parse_output(g, schema, cfg.policy, cfg.strict_payload)
                for g in generations
            ]
            return {
                "id": sample.id,
                "generations": generations,
                "outcomes": [o.to_obj() for o in outcomes],
            }

        workers = min(gw.desc.max_inflight, len(pending))
        with ThreadPoolExecutor(max_workers=workers) as pool_exec:
            with open(probes_path, "a", encoding="utf-8") as fh:
                # results consumed in pool order: deterministic archive bytes
                for entry in pool_exec.map(probe_one, pending):
                    fh.write(dumps_line(entry) + "\n")
                    fh.flush()
                    done[entry["id"]] = entry

    return {"config_digest": digest, "probed": len(done), "new": len(pending)}


def load_probe_archive(run_dir: str | Path, pool: list[Sample]) -> list[ProbeSet]:
    """Rehydrate ProbeSets in pool order; every pool sample must be present."""
    run_dir = Path(run_dir)
    entries = {e["id"]: e for e in _read_probe_lines(run_dir / PROBES)}
    missing = [s.id for s in pool if s.id not in entries]
    if missing:
        raise IncompleteArchive(
            f"probe archive missing {len(missing)} of {len(pool)} samples: "
            + ", ".join(missing[:5]))
    probes = []
    for sample in pool:
        entry = entries[sample.id]
        probes.append(ProbeSet(
            sample_id=sample.id,
            generations=tuple(entry["generations"]),
            outcomes=tuple(ParseOutcome.from_obj(o) for o in entry["outcomes"]),
        ))
    return probes


def cmd_score(
    run_dir: str | Path,
    cfg: RunConfig,
    pool: list[Sample],
) -> list[UncertaintyScores]:
    """Score the archived probes. Pure file-to-file: performs no generation
    and needs no backend."""
    run_dir = Path(run_dir)
    meta_path = run_dir / PROBE_META
    if meta_path.exists():
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        if meta.get("pool_digest") != pool_digest(pool):
            raise DataError("pool file differs from the one probed; re-run probe")

    probes = load_probe_archive(run_dir, pool)
    scores = score_pool(probes, cfg)
    write_atomic(run_dir / SCORES,
                 "".join(dumps_line(s.to_obj()) + "\n" for s in scores))
    return scores


def cmd_select(
    run_dir: str | Path,
    cfg: RunConfig,
    pool: list[Sample],
    n: int,
    strategy: str | None = None,
) -> SelectionResult:
    run_dir = Path(run_dir)
    strategy = strategy or cfg.strategy
    scores = load_scores(run_dir) if (run_dir / SCORES).exists() else None
    selection = run_strategy(strategy, cfg, n, pool, pool_scores=scores)
    write_atomic(run_dir / SELECTION, json.dumps(selection.to_obj(), indent=2) + "\n")
    return selection


def cmd_score_select(
    run_dir: str | Path,
    cfg: RunConfig,
    pool: list[Sample],
    n: int,
    strategy: str | None = None,
) -> SelectionResult:
    cmd_score(run_dir, cfg, pool)
    return cmd_select(run_dir, cfg, pool, n, strategy=strategy)


def load_scores(run_dir: str | Path) -> list[UncertaintyScores]:
    path = Path(run_dir) / SCORES
    if not path.exists():
        raise DataError(f"no scores file at {path}; run score first")
    return [UncertaintyScores.from_obj(json.loads(line))
            for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


def load_selection(run_dir: str | Path) -> SelectionResult:
    path = Path(run_dir) / SELECTION
    if not path.exists():
        raise DataError(f"no selection manifest at {path}; run select first")
    return SelectionResult.from_obj(json.loads(path.read_text(encoding="utf-8")))


def _final_generation(gateway: Gateway, prompt: str, cfg: RunConfig,
                      schema: SchemaSpec) -> str:
    """One generation by default; with final_samples > 1, the first one that
    parses wins, falling back to the first generation outright."""
    if cfg.final_samples <= 1:
        return gateway.generate(prompt, 1)
    generations = gateway.generate_k(prompt, cfg.final_samples)
    for g in generations:
        if parse_output(g, schema, cfg.policy, cfg.strict_payload).ok:
            return g
    return generations[0]


def cmd_infer(
    run_dir: str | Path,
    cfg: RunConfig,
    pool: list[Sample],
    test: list[Sample],
    schema: SchemaSpec,
    template: PromptTemplate,
    labels_mode: str = "gold_lookup",
    store=None,
    gateway: Gateway | None = None,
    annotation_timeout: float = 300.0,
) -> dict[str, ParseOutcome]:
    """Resolve labels for the selection, build the final few-shot prompt, and
    run inference over the test split."""
    run_dir = Path(run_dir)
    selection = load_selection(run_dir)
    exemplars = resolve_labels(selection, pool, mode=labels_mode, store=store,
                               timeout=annotation_timeout)
    ordered = exemplar_prompt_order(selection, exemplars)

    gw = gateway if gateway is not None else Gateway(cfg)
    rows = []
    predictions: dict[str, ParseOutcome] = {}

    def infer_one(sample: Sample) -> tuple[str, str]:
        prompt = build_prompt(sample, ordered, template, schema)
        return sample.id, _final_generation(gw, prompt, cfg, schema)

    workers = min(gw.desc.max_inflight, max(len(test), 1))
    with ThreadPoolExecutor(max_workers=workers) as executor:
        for sample_id, raw in executor.map(infer_one, test):
            outcome = parse_output(raw, schema, cfg.policy, cfg.strict_payload)
            predictions[sample_id] = outcome
            rows.append({"id": sample_id, "raw": raw, "outcome": outcome.to_obj()})

    write_atomic(run_dir / PREDICTIONS,
                 "".join(dumps_line(r) + "\n" for r in rows))
    write_atomic(run_dir / "cache_stats.json",
                 json.dumps(dict(gw.stats), indent=2) + "\n")
    return predictions


def load_predictions(run_dir: str | Path) -> dict[str, ParseOutcome]:
    path = Path(run_dir) / PREDICTIONS
    if not path.exists():
        raise DataError(f"no predictions at {path}; run infer first")
    predictions = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        row = json.loads(line)
        predictions[row["id"]] = ParseOutcome.from_obj(row["outcome"])
    return predictions


def cmd_eval(
    run_dir: str | Path,
    cfg: RunConfig,
    test: list[Sample],
    schema: SchemaSpec,
) -> dict[str, EvalReport]:
    run_dir = Path(run_dir)
    predictions = load_predictions(run_dir)
    reports = evaluate_run(predictions, test, schema)
    report_obj = {task: report.to_obj() for task, report in reports.items()}
    write_atomic(run_dir / REPORT, json.dumps(report_obj, indent=2) + "\n")

    stats_path = run_dir / "cache_stats.json"
    cache_stats = (json.loads(stats_path.read_text(encoding="utf-8"))
                   if stats_path.exists() else {})
    write_manifest(run_dir, cfg, schema, load_selection(run_dir), reports,
                   cache_stats)
    return reports


def cmd_infer_eval(
    run_dir: str | Path,
    cfg: RunConfig,
    pool: list[Sample],
    test: list[Sample],
    schema: SchemaSpec,
    template: PromptTemplate,
    labels_mode: str = "gold_lookup",
    store=None,
    gateway: Gateway | None = None,
    annotation_timeout: float = 300.0,
) -> dict[str, EvalReport]:
    cmd_infer(run_dir, cfg, pool, test, schema, template,
              labels_mode=labels_mode, store=store, gateway=gateway,
              annotation_timeout=annotation_timeout)
    return cmd_eval(run_dir, cfg, test, schema)


def write_manifest(
    run_dir: Path,
    cfg: RunConfig,
    schema: SchemaSpec,
    selection: SelectionResult,
    reports: dict[str, EvalReport],
    cache_stats: dict,
) -> None:
    artifacts = {}
    for name in (PROBE_META, PROBES, SCORES, SELECTION, PREDICTIONS, REPORT):
        path = run_dir / name
        if path.exists():
            artifacts[name] = {"path": name, "sha256": sha256_file(path)}
    manifest = {
        "run_id": f"{selection.strategy}-{sha256_text(json.dumps(cfg.to_obj(), sort_keys=True))[:12]}",
        "created_at": time.time(),
        "strategy": selection.strategy,
        "seed": cfg.seed,
        "config": cfg.to_obj(),
        "schema": schema.to_obj(),
        "artifacts": artifacts,
        "cache_stats": dict(cache_stats),
        "f1": {task: report.f1 for task, report in reports.items()},
    }
    write_atomic(run_dir / MANIFEST, json.dumps(manifest, indent=2) + "\n")


def run_full(
    run_dir: str | Path,
    cfg: RunConfig,
    pool: list[Sample],
    test: list[Sample],
    schema: SchemaSpec,
    template: PromptTemplate,
    seed_exemplars: list[Exemplar],
    n: int,
    strategy: str | None = None,
    labels_mode: str = "gold_lookup",
    gateway: Gateway | None = None,
) -> dict[str, EvalReport]:
    cmd_probe(run_dir, cfg, pool, schema, template, seed_exemplars, gateway=gateway)
    cmd_score_select(run_dir, cfg, pool, n, strategy=strategy)
    return cmd_infer_eval(run_dir, cfg, pool, test, schema, template,
                          labels_mode=labels_mode, gateway=gateway)


def weight_label(weights: tuple[float, float, float]) -> str:
    return "/".join(f"{w:g}" for w in weights)


def cmd_sweep(
    out_dir: str | Path,
    cfg: RunConfig,
    pool: list[Sample],
    test: list[Sample],
    schema: SchemaSpec,
    template: PromptTemplate,
    seed_exemplars: list[Exemplar],
    n: int,
    grid_k: list[int] | None = None,
    grid_weights: list[tuple[float, float, float]] | None = None,
    strategy: str = "apie",
    labels_mode: str = "gold_lookup",
) -> dict:
    """One full run per grid point, all sharing the generation cache. A failed
    point is recorded in its row rather than aborting the sweep."""
    grid_k = grid_k or []
    grid_weights = grid_weights or []
    if not grid_k and not grid_weights:
        raise SelectionError("empty_grid", "sweep needs at least one k or weight triple")

    out_dir = Path(out_dir)
    points: list[tuple[str, str, RunConfig]] = []
    for k in grid_k:
        points.append((f"k={k}", f"k_{k}", replace(cfg, k=k)))
    for weights in grid_weights:
        alpha, beta, gamma = weights
        label = f"weights={weight_label(weights)}"
        slug = "w_" + "_".join(f"{w:g}" for w in weights)
        points.append((label, slug, replace(cfg, alpha=alpha, beta=beta, gamma=gamma)))

    model = cfg.backend.model if cfg.backend else ""
    rows = []
    for label, slug, point_cfg in points:
        run_dir = out_dir / slug
        row = {"model": model, "grid_point": label, "run_dir": str(run_dir)}
        try:
            reports = run_full(run_dir, validate_config(point_cfg), pool, test,
                               schema, template, seed_exemplars, n,
                               strategy=strategy, labels_mode=labels_mode)
            for task, report in reports.items():
                row[f"{task}_f1"] = report.f1
        except Exception as exc:  # a sweep survives individual point failures
            log.warning("sweep point %s failed: %s", label, exc)
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)

    sweep_obj = {"model": model, "strategy": strategy, "rows": rows}
    out_dir.mkdir(parents=True, exist_ok=True)
    write_atomic(out_dir / "sweep.json", json.dumps(sweep_obj, indent=2) + "\n")
    return sweep_obj


def render_sweep_table(sweep_obj: dict) -> str:
    headers = ["model", "grid_point", "ner_f1", "re_f1", "error"]
    lines = ["\t".join(headers)]
    for row in sweep_obj["rows"]:
        lines.append("\t".join([
            row.get("model", ""),
            row.get("grid_point", ""),
            f"{row['ner_f1']:.4f}" if "ner_f1" in row else "-",
            f"{row['re_f1']:.4f}" if "re_f1" in row else "-",
            row.get("error", ""),
        ]))
    return "\n".join(lines)


def cmd_report(manifest_paths: list[str | Path]) -> dict:
    """Aggregate F1 across runs, grouped by strategy, after verifying that
    every artifact still matches the digest its manifest recorded."""
    if not manifest_paths:
        raise DataError("report needs at least one run manifest")
    runs = []
    for path in manifest_paths:
        path = Path(path)
        manifest = json.loads(path.read_text(encoding="utf-8"))
        run_dir = path.parent
        for name, entry in manifest.get("artifacts", {}).items():
            artifact = run_dir / entry["path"]
            if not artifact.exists():
                raise ManifestDigestMismatch(f"{artifact} is missing")
            actual = sha256_file(artifact)
            if actual != entry["sha256"]:
                raise ManifestDigestMismatch(
                    f"{artifact}: recorded {entry['sha256'][:12]}, found {actual[:12]}")
        runs.append(manifest)

    groups: dict[str, dict[str, list[float]]] = {}
    for manifest in runs:
        strategy = manifest["strategy"]
        for task, f1 in manifest.get("f1", {}).items():
            groups.setdefault(strategy, {}).setdefault(task, []).append(f1)

    summary: dict[str, dict] = {}
    for strategy, tasks in sorted(groups.items()):
        summary[strategy] = {}
        for task, values in sorted(tasks.items()):
            summary[strategy][task] = {
                "runs": len(values),
                "mean": statistics.fmean(values),
                "min": min(values),
                "max": max(values),
                "stddev": statistics.pstdev(values),
            }
    return {"runs": len(runs), "groups": summary}


def render_report_table(report_obj: dict) -> str:
    lines = ["strategy\ttask\truns\tmean_f1\tmin\tmax\tstddev"]
    for strategy, tasks in report_obj["groups"].items():
        for task, stats in tasks.items():
            lines.append("\t".join([
                strategy, task, str(stats["runs"]),
                f"{stats['mean']:.4f}", f"{stats['min']:.4f}",
                f"{stats['max']:.4f}", f"{stats['stddev']:.4f}",
            ]))
    return "\n".join(lines)
