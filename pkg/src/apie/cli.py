"""Command line front end.

Every subcommand is a thin file-to-file wrapper over the pipeline stage of
the same name; run state lives entirely in the --out directory. Exit codes:
0 ok, 2 configuration error, 3 data error, 4 backend error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import ApieError, BackendError, ConfigError, DataError
from .gateway import parse_backend_spec
from .model import RunConfig, Sample, load_samples, load_schema, validate_config
from .pipeline import (
    cmd_eval,
    cmd_infer,
    cmd_probe,
    cmd_report,
    cmd_score,
    cmd_select,
    cmd_sweep,
    load_scores,
    load_selection,
    render_report_table,
    render_sweep_table,
)
from .prompting import PromptTemplate, seed_exemplars
from .selection import STRATEGIES

LABEL_MODES = {"gold": "gold_lookup", "service": "annotation_service"}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("run configuration")
    group.add_argument("--k", type=int, help="probe generations per pool sample")
    group.add_argument("--n", type=int, help="exemplars to select")
    group.add_argument("--alpha", type=float, help="weight of the disagreement signal")
    group.add_argument("--beta", type=float, help="weight of the format signal")
    group.add_argument("--gamma", type=float, help="weight of the content signal")
    group.add_argument("--temperature", type=float)
    group.add_argument("--strategy", choices=STRATEGIES)
    group.add_argument("--seed", type=int)
    group.add_argument("--probe-exemplars", type=int, dest="probe_exemplars")
    group.add_argument("--strict-payload", action="store_true", default=None,
                       dest="strict_payload",
                       help="disable salvage of JSON embedded in prose")


def _add_backend_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("backend")
    group.add_argument("--backend",
                       help="mock:FIXTURE.jsonl | openai:URL | ollama:URL")
    group.add_argument("--model", default="")
    group.add_argument("--cache-dir", dest="cache_dir")


def _add_data_flags(parser: argparse.ArgumentParser, *, pool=False, test=False,
                    schema=False, template=False) -> None:
    group = parser.add_argument_group("data")
    if pool:
        group.add_argument("--pool", required=True, help="pool JSONL file")
    if test:
        group.add_argument("--test", required=True, help="test JSONL file")
    if schema:
        group.add_argument("--schema", required=True, help="schema JSON file")
    if template:
        group.add_argument("--template", help="prompt template file (default: built in)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="apie",
        description="uncertainty-guided exemplar selection for extraction prompts")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("probe", help="generate k outputs per pool sample")
    _add_data_flags(p, pool=True, schema=True, template=True)
    _add_config_flags(p)
    _add_backend_flags(p)
    p.add_argument("--seed-exemplars", dest="seed_exemplar_file",
                   help="JSONL with labeled demonstrations for probing")
    p.add_argument("--out", required=True, help="run directory")

    p = sub.add_parser("score", help="compute uncertainty scores from probes")
    _add_data_flags(p, pool=True)
    _add_config_flags(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("select", help="pick exemplars from the scored pool")
    _add_data_flags(p, pool=True)
    _add_config_flags(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("annotate-serve", help="serve the annotation UI and API")
    _add_data_flags(p, pool=True, schema=True)
    p.add_argument("--out", required=True)
    p.add_argument("--port", type=int, default=8787)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--ui-dir", dest="ui_dir",
                   help="static frontend build (default: bundled frontend/dist if present)")
    p.add_argument("--annotations", help="annotation log path (default: OUT/annotations.jsonl)")

    p = sub.add_parser("infer", help="run final few-shot inference on the test split")
    _add_data_flags(p, pool=True, test=True, schema=True, template=True)
    _add_config_flags(p)
    _add_backend_flags(p)
    p.add_argument("--labels", choices=sorted(LABEL_MODES), default="gold",
                   help="exemplar label source: gold lookup or the annotation service")
    p.add_argument("--annotations", help="annotation log path (service mode)")
    p.add_argument("--annotation-timeout", type=float, default=300.0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="score predictions against gold")
    _add_data_flags(p, test=True, schema=True)
    _add_config_flags(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("sweep", help="run the k and weight grids")
    _add_data_flags(p, pool=True, test=True, schema=True, template=True)
    _add_config_flags(p)
    _add_backend_flags(p)
    p.add_argument("--seed-exemplars", dest="seed_exemplar_file")
    p.add_argument("--grid-k", help="comma separated, e.g. 2,3,5")
    p.add_argument("--grid-weights",
                   help="semicolon separated triples, e.g. 0.33,0.33,0.33;0.3,0.5,0.2")
    p.add_argument("--out", required=True)

    p = sub.add_parser("report", help="aggregate F1 across run manifests")
    p.add_argument("manifests", nargs="+", help="manifest.json paths")
    p.add_argument("--json", action="store_true", dest="as_json",
                   help="print machine-readable JSON instead of a table")

    return parser


def build_config(args: argparse.Namespace) -> RunConfig:
    overrides = {}
    for name in ("k", "temperature", "alpha", "beta", "gamma", "seed",
                 "strategy", "cache_dir", "probe_exemplars", "strict_payload"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    backend_spec = getattr(args, "backend", None)
    if backend_spec:
        overrides["backend"] = parse_backend_spec(backend_spec,
                                                  model=getattr(args, "model", ""))
    return validate_config(RunConfig(**overrides))


def load_template(args: argparse.Namespace) -> PromptTemplate:
    path = getattr(args, "template", None)
    return PromptTemplate.from_file(path) if path else PromptTemplate.default()


def load_pool(args: argparse.Namespace, cfg: RunConfig) -> list[Sample]:
    return load_samples(args.pool, split="pool", policy=cfg.policy)


def load_test(args: argparse.Namespace, cfg: RunConfig) -> list[Sample]:
    return load_samples(args.test, split="test", policy=cfg.policy)


def resolve_seed_exemplars(args: argparse.Namespace, cfg: RunConfig,
                           pool: list[Sample]):
    return seed_exemplars(cfg.probe_exemplars, cfg.seed,
                          exemplar_file=getattr(args, "seed_exemplar_file", None),
                          pool=pool)


def parse_grid_k(text: str | None) -> list[int]:
    if not text:
        return []
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise ConfigError("bad_grid", f"cannot parse --grid-k {text!r}") from exc


def parse_grid_weights(text: str | None) -> list[tuple[float, float, float]]:
    if not text:
        return []
    triples = []
    for chunk in text.split(";"):
        if not chunk.strip():
            continue
        parts = [p for p in chunk.split(",") if p.strip()]
        if len(parts) != 3:
            raise ConfigError("bad_grid",
                              f"weight triple {chunk!r} must have three values")
        try:
            triples.append(tuple(float(p) for p in parts))
        except ValueError as exc:
            raise ConfigError("bad_grid", f"cannot parse weights {chunk!r}") from exc
    return triples


def _require_backend(cfg: RunConfig) -> None:
    if cfg.backend is None:
        raise ConfigError("missing_backend", "this command needs --backend")


def run_probe(args: argparse.Namespace) -> int:
    cfg = build_config(args)
    _require_backend(cfg)
    pool = load_pool(args, cfg)
    schema = load_schema(args.schema)
    template = load_template(args)
    exemplars = resolve_seed_exemplars(args, cfg, pool)
    result = cmd_probe(args.out, cfg, pool, schema, template, exemplars)
    print(f"probed {result['probed']} samples ({result['new']} new) -> {args.out}")
    return 0


def run_score(args: argparse.Namespace) -> int:
    cfg = build_config(args)
    scores = cmd_score(args.out, cfg, load_pool(args, cfg))
    print(f"scored {len(scores)} samples -> {Path(args.out) / 'scores.jsonl'}")
    return 0


def run_select(args: argparse.Namespace) -> int:
    cfg = build_config(args)
    n = args.n
    if n is None:
        if cfg.strategy == "zsl":
            n = 0
        else:
            raise ConfigError("missing_n", "select needs --n")
    selection = cmd_select(args.out, cfg, load_pool(args, cfg), n)
    print(f"{selection.strategy} selected: {', '.join(selection.selected_ids) or '(none)'}")
    return 0


def _default_ui_dir() -> str | None:
    here = Path(__file__).resolve()
    for base in (here.parents[2], Path.cwd()):
        candidate = base / "frontend" / "dist"
        if candidate.is_dir():
            return str(candidate)
    return None


def run_annotate_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import ProbePreview, ServiceState, create_app
    from .store import AnnotationStore

    cfg = build_config(args)
    schema = load_schema(args.schema)
    pool = load_pool(args, cfg)
    run_dir = Path(args.out)
    selection = load_selection(run_dir)
    scores = {s.sample_id: s for s in load_scores(run_dir)} \
        if (run_dir / "scores.jsonl").exists() else {}

    previews: dict[str, list[ProbePreview]] = {}
    probes_path = run_dir / "probes.jsonl"
    if probes_path.exists():
        for line in probes_path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            entry = json.loads(line)
            previews[entry["id"]] = [
                ProbePreview(
                    generation=gen,
                    status=outcome["status"],
                    failure_kind=outcome.get("failure_kind"),
                )
                for gen, outcome in zip(entry["generations"], entry["outcomes"])
            ]

    log_path = args.annotations or str(run_dir / "annotations.jsonl")
    store = AnnotationStore(log_path, schema, cfg.policy)
    state = ServiceState(
        schema=schema,
        store=store,
        samples={s.id: s for s in pool},
        selection=selection,
        scores=scores,
        previews=previews,
    )
    ui_dir = args.ui_dir or _default_ui_dir()
    app = create_app(state, ui_dir=ui_dir)
    where = f"http://{args.host}:{args.port}/"
    print(f"annotation service for {len(selection.selected_ids)} samples at {where}")
    if ui_dir:
        print(f"serving UI from {ui_dir}")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def run_infer(args: argparse.Namespace) -> int:
    cfg = build_config(args)
    _require_backend(cfg)
    pool = load_pool(args, cfg)
    test = load_test(args, cfg)
    schema = load_schema(args.schema)
    template = load_template(args)

    store = None
    mode = LABEL_MODES[args.labels]
    if mode == "annotation_service":
        from .store import AnnotationStore
        log_path = args.annotations or str(Path(args.out) / "annotations.jsonl")
        store = AnnotationStore(log_path, schema, cfg.policy)

    predictions = cmd_infer(args.out, cfg, pool, test, schema, template,
                            labels_mode=mode, store=store,
                            annotation_timeout=args.annotation_timeout)
    parsed = sum(1 for outcome in predictions.values() if outcome.ok)
    print(f"inferred {len(predictions)} samples ({parsed} parsed) -> {args.out}")
    return 0


def run_eval(args: argparse.Namespace) -> int:
    cfg = build_config(args)
    reports = cmd_eval(args.out, cfg, load_test(args, cfg), load_schema(args.schema))
    for task, report in reports.items():
        print(f"{task}: P={report.precision:.4f} R={report.recall:.4f} "
              f"F1={report.f1:.4f} (tp={report.tp} fp={report.fp} fn={report.fn})")
    return 0


def run_sweep(args: argparse.Namespace) -> int:
    cfg = build_config(args)
    _require_backend(cfg)
    pool = load_pool(args, cfg)
    test = load_test(args, cfg)
    schema = load_schema(args.schema)
    template = load_template(args)
    exemplars = resolve_seed_exemplars(args, cfg, pool)
    n = args.n if args.n is not None else cfg.final_exemplars
    sweep_obj = cmd_sweep(
        args.out, cfg, pool, test, schema, template, exemplars, n,
        grid_k=parse_grid_k(args.grid_k),
        grid_weights=parse_grid_weights(args.grid_weights),
        strategy=cfg.strategy,
    )
    print(render_sweep_table(sweep_obj))
    return 0


def run_report(args: argparse.Namespace) -> int:
    report_obj = cmd_report(args.manifests)
    if args.as_json:
        print(json.dumps(report_obj, indent=2))
    else:
        print(render_report_table(report_obj))
    return 0


HANDLERS = {
    "probe": run_probe,
    "score": run_score,
    "select": run_select,
    "annotate-serve": run_annotate_serve,
    "infer": run_infer,
    "eval": run_eval,
    "sweep": run_sweep,
    "report": run_report,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return HANDLERS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return 4
    except ApieError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
