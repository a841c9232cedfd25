"""Command-line entry point: generate / filter / format / evaluate / stats
/ correlate / scorer-check.

Every subcommand prints a human-readable summary and writes a
machine-readable JSON report. Flags mirror config-file keys one-to-one
(JSON file via --config); explicit flags win. Exit codes: 0 success,
1 domain error, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .analysis import HumanRating, MissingRatings, correlate_metrics
from .dataset import (
    EmptyDataset,
    SchemaError,
    TableParseError,
    dataset_statistics,
    load_instances,
    write_jsonl,
)
from .filters import (
    FilterThresholds,
    LexicalScorer,
    RawPair,
    ScorerUnavailable,
    apply_filters,
)
from .formatter import MissingExplanation, MissingTable, format_example
from .gateway import BackendUnavailable, GatewayConfig, InvalidResponse
from .metrics import (
    EmbedderUnavailable,
    HashingEmbedder,
    InstanceEval,
    aggregate,
    evaluate_prediction,
    render_report,
)
from .pipeline import AllIterationsFailed, PipelineConfig, run_pipeline

_DOMAIN_ERRORS = (
    SchemaError,
    TableParseError,
    EmptyDataset,
    MissingTable,
    MissingExplanation,
    MissingRatings,
    ScorerUnavailable,
    EmbedderUnavailable,
    BackendUnavailable,
    InvalidResponse,
    AllIterationsFailed,
    ValueError,
    OSError,
)


class UsageError(Exception):
    """Bad flag combination discovered after argparse (exit code 2)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # print full help on usage errors
        self.print_help(sys.stderr)
        sys.stderr.write(f"\nerror: {message}\n")
        raise SystemExit(2)


def _fail(kind: str, message: str) -> int:
    sys.stderr.write(
        json.dumps({"error": kind, "message": message}, ensure_ascii=False) + "\n"
    )
    return 1


def _write_json(path: str | Path, payload: dict) -> None:
    Path(path).write_text(
        json.dumps(payload, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(cfg, dict):
        raise ValueError("config file must hold a JSON object")
    return cfg


def _merge(args: argparse.Namespace, config: dict, key: str, default):
    """Flag value if given, else config-file value, else default."""
    value = getattr(args, key, None)
    if value is not None:
        return value
    if key in config:
        return config[key]
    return default


def _read_jsonl(path: str | Path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON: {exc.msg}", line_no) from exc
    return out


def _thresholds(args, config) -> FilterThresholds:
    return FilterThresholds(
        min_rows_plus_cols_exclusive=int(
            _merge(args, config, "min_rows_plus_cols_exclusive", 3)
        ),
        min_cols_exclusive=int(_merge(args, config, "min_cols_exclusive", 1)),
        max_na_exclusive=int(_merge(args, config, "max_na_exclusive", 4)),
        consistency_threshold=float(
            _merge(args, config, "consistency_threshold", 0.5)
        ),
        faithfulness_threshold=float(
            _merge(args, config, "faithfulness_threshold", 0.5)
        ),
    )


def _scorer(name: str):
    if name == "lexical":
        return LexicalScorer()
    from .scorer_client import HttpScorer

    return HttpScorer()


def _embedder(name: str):
    if name == "fallback":
        return HashingEmbedder()
    from .scorer_client import HttpScorer

    return HttpScorer()


def _add_threshold_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--min-rows-plus-cols-exclusive", type=int, dest="min_rows_plus_cols_exclusive")
    p.add_argument("--min-cols-exclusive", type=int, dest="min_cols_exclusive")
    p.add_argument("--max-na-exclusive", type=int, dest="max_na_exclusive")
    p.add_argument("--consistency-threshold", type=float, dest="consistency_threshold")
    p.add_argument("--faithfulness-threshold", type=float, dest="faithfulness_threshold")


def build_parser() -> _Parser:
    parser = _Parser(prog="ie-forge", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="run the synthesis pipeline")
    backend = g.add_mutually_exclusive_group()
    backend.add_argument("--mock", action="store_true", help="deterministic offline backend")
    backend.add_argument("--remote", action="store_true", help="chat-completions endpoint from IE_FORGE_API_URL")
    g.add_argument("--seed", type=int)
    g.add_argument("--iterations", type=int, dest="n_iterations")
    g.add_argument("--variants", type=str, help="comma list out of direct,cot")
    g.add_argument("--jobs", type=int, dest="concurrency")
    g.add_argument("--min-text-words", type=int, dest="min_text_words")
    g.add_argument("--defect-malformed", type=float, dest="defect_malformed")
    g.add_argument("--defect-extra-header", type=float, dest="defect_extra_header")
    g.add_argument("--defect-na-flood", type=float, dest="defect_na_flood")
    g.add_argument("--scorer", choices=["lexical", "service"])
    g.add_argument("--config")
    g.add_argument("--out", required=True, help="run/checkpoint directory")
    _add_threshold_flags(g)

    f = sub.add_parser("filter", help="filter raw instances from a JSONL file")
    f.add_argument("--raw", required=True)
    f.add_argument("--out", required=True, help="output directory")
    f.add_argument("--scorer", choices=["lexical", "service"])
    f.add_argument("--config")
    _add_threshold_flags(f)

    m = sub.add_parser("format", help="serialize instances into the chat training schema")
    m.add_argument("--data", required=True)
    m.add_argument("--out", required=True)

    e = sub.add_parser("evaluate", help="score prediction files against gold instances")
    e.add_argument("--pred", required=True, help="JSONL of {id, output}")
    e.add_argument("--gold", required=True, help="gold instance JSONL")
    e.add_argument("--embedder", choices=["fallback", "service"])
    e.add_argument("--out-report", dest="out_report")
    e.add_argument("--out-evals", dest="out_evals")

    s = sub.add_parser("stats", help="dataset statistics over an instance file")
    s.add_argument("--data", required=True)
    s.add_argument("--out")

    c = sub.add_parser("correlate", help="metric/human-rating correlation and agreement")
    c.add_argument("--evals", required=True, help="per-instance eval JSONL")
    c.add_argument("--ratings", required=True, help="rating JSONL")
    c.add_argument("--out")

    k = sub.add_parser("scorer-check", help="probe the scorer service contract")
    k.add_argument("--url", help="override IE_FORGE_SCORER_URL")
    k.add_argument("--out")

    return parser


def _cmd_generate(args) -> int:
    config = _load_config(args.config)
    use_mock = args.mock or (not args.remote and _merge(args, config, "backend", "mock") == "mock")
    seed = _merge(args, config, "seed", None)
    if use_mock and seed is None:
        raise UsageError("--seed is required for mock runs")
    variants = _merge(args, config, "variants", "direct,cot")
    if isinstance(variants, str):
        variants = tuple(v.strip() for v in variants.split(",") if v.strip())
    defect_rates = {}
    for kind in ("malformed", "extra_header", "na_flood"):
        rate = _merge(args, config, f"defect_{kind}", 0.0)
        if rate:
            defect_rates[kind] = float(rate)

    pipeline_cfg = PipelineConfig(
        seed=int(seed if seed is not None else 0),
        n_iterations=int(_merge(args, config, "n_iterations", 2)),
        variants=tuple(variants),
        concurrency=int(_merge(args, config, "concurrency", 4)),
        min_text_words=int(_merge(args, config, "min_text_words", 20)),
        thresholds=_thresholds(args, config),
    )
    gateway_cfg = GatewayConfig(
        backend="mock" if use_mock else "remote",
        seed=pipeline_cfg.seed if use_mock else None,
        defect_rates=defect_rates,
        max_in_flight=pipeline_cfg.concurrency,
    )
    scorer = _scorer(_merge(args, config, "scorer", "lexical"))
    backend = gateway_cfg.build()

    survivors, report = run_pipeline(pipeline_cfg, backend, scorer, args.out)
    print(f"survivors: {len(survivors)}")
    for variant, counts in sorted(report.per_variant.items()):
        print(
            f"  {variant}: raw={counts.raw} "
            f"validity={counts.rejected_validity} "
            f"informativeness={counts.rejected_informativeness} "
            f"consistency={counts.rejected_consistency} "
            f"faithfulness={counts.rejected_faithfulness} "
            f"survivors={counts.survivors}"
        )
    print(f"report: {Path(args.out) / 'report.json'}")
    return 0


def _cmd_filter(args) -> int:
    config = _load_config(args.config)
    raws = [RawPair.from_dict(r) for r in _read_jsonl(args.raw)]
    scorer = _scorer(_merge(args, config, "scorer", "lexical"))
    outcomes, report = apply_filters(raws, scorer, _thresholds(args, config))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_jsonl([o.pair.to_dict() for o in outcomes], out_dir / "survivors_raw.jsonl")
    _write_json(out_dir / "report.json", report.to_dict())
    print(f"raw: {report.total.raw}  survivors: {report.total.survivors}")
    print(f"report: {out_dir / 'report.json'}")
    return 0


def _cmd_format(args) -> int:
    instances = load_instances(args.data)
    examples = [format_example(inst) for inst in instances]
    write_jsonl([ex.to_dict() for ex in examples], args.out)
    by_variant: dict[str, int] = {}
    for ex in examples:
        by_variant[ex.variant] = by_variant.get(ex.variant, 0) + 1
    report_path = Path(args.out).with_suffix(".report.json")
    _write_json(report_path, {"examples": len(examples), "by_variant": by_variant})
    print(f"formatted {len(examples)} examples -> {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    embedder = _embedder(args.embedder or "fallback")
    gold = {inst.id: inst for inst in load_instances(args.gold)}
    preds: dict[str, str] = {}
    for rec in _read_jsonl(args.pred):
        if "id" not in rec or "output" not in rec:
            raise ValueError("prediction records need {id, output}")
        preds[str(rec["id"])] = str(rec["output"])
    unknown = sorted(set(preds) - set(gold))
    if unknown:
        print(f"warning: {len(unknown)} predictions without gold instance ignored")
    missing = sorted(set(gold) - set(preds))
    if missing:
        print(f"warning: {len(missing)} gold instances without prediction score 0")

    evals = []
    for inst_id, inst in gold.items():
        if inst.table is None:
            raise ValueError(f"gold instance {inst_id} has no table")
        meta = {
            "id": inst.id,
            "category": inst.category,
            "source_type": inst.source_type,
            "difficulty": inst.difficulty,
        }
        evals.append(
            evaluate_prediction(preds.get(inst_id, ""), inst.table, meta, embedder)
        )
    report = aggregate(evals)

    out_report = args.out_report or str(Path(args.pred).with_suffix(".report.json"))
    out_evals = args.out_evals or str(Path(args.pred).with_suffix(".evals.jsonl"))
    _write_json(out_report, report.to_dict())
    write_jsonl([e.to_dict() for e in evals], out_evals)
    print(render_report(report))
    print(f"report: {out_report}\nper-instance evals: {out_evals}")
    return 0


def _cmd_stats(args) -> int:
    instances = load_instances(args.data)
    report = dataset_statistics(instances)
    out = args.out or str(Path(args.data).with_suffix(".stats.json"))
    _write_json(out, report.to_dict())
    print(report.render_text())
    print(f"report: {out}")
    return 0


def _cmd_correlate(args) -> int:
    evals = [InstanceEval.from_dict(r) for r in _read_jsonl(args.evals)]
    ratings = [
        HumanRating(
            instance_id=str(r["instance_id"]),
            annotator_id=str(r["annotator_id"]),
            header_rating=str(r["header_rating"]),
            content_rating=str(r["content_rating"]),
        )
        for r in _read_jsonl(args.ratings)
    ]
    report = correlate_metrics(evals, ratings)
    out = args.out or str(Path(args.evals).with_suffix(".correlation.json"))
    _write_json(out, report.to_dict())
    print(f"{'metric':<24} {'pearson':>8} {'spearman':>9} {'kendall':>8}")
    for metric, row in report.coefficients.items():
        print(
            f"{metric:<24} {row['pearson']:8.3f} {row['spearman']:9.3f} "
            f"{row['kendall']:8.3f}"
        )
    print(
        f"fleiss kappa: header {report.kappa_header:.3f}, "
        f"content {report.kappa_content:.3f}"
    )
    print(f"report: {out}")
    return 0


def _cmd_scorer_check(args) -> int:
    from .scorer_client import HttpScorer

    scorer = HttpScorer(base_url=args.url)
    health = scorer.health()
    checks: dict[str, bool] = {}
    checks["health_ok"] = health.get("status") == "ok"
    sanity = scorer.score("the salary is high", "the salary is high")
    checks["self_entailment"] = sanity >= 0.9
    single = scorer.score("alpha beta", "alpha")
    batch = scorer.score_many([("alpha beta", "alpha")])[0]
    checks["batch_single_agreement"] = abs(single - batch) < 1e-9
    v1 = scorer.embed(["alpha"])
    v2 = scorer.embed(["alpha"])
    checks["embed_deterministic"] = bool((v1 == v2).all())
    payload = {"health": health, "checks": checks, "self_entailment_score": sanity}
    if args.out:
        _write_json(args.out, payload)
    for name, ok in checks.items():
        print(f"{name}: {'ok' if ok else 'FAIL'}")
    return 0 if all(checks.values()) else 1


_COMMANDS = {
    "generate": _cmd_generate,
    "filter": _cmd_filter,
    "format": _cmd_format,
    "evaluate": _cmd_evaluate,
    "stats": _cmd_stats,
    "correlate": _cmd_correlate,
    "scorer-check": _cmd_scorer_check,
}


def run_cli(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        parser.error(str(exc))
        raise AssertionError("unreachable")  # pragma: no cover
    except _DOMAIN_ERRORS as exc:
        return _fail(type(exc).__name__, str(exc))


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
