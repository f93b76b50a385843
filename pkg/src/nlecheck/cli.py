"""Command line interface: run the tests, render reports, manage audits,
serve the mock model, and validate endpoints.

Exit codes: 0 ok, 1 usage/config error, 2 endpoint conformance error,
3 data error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from pathlib import Path

import yaml

from . import __version__
from .corpus import DataError, TaskKind, load_dataset, read_jsonl, write_jsonl
from .counterfactual import (
    ANY_FLIP,
    PER_TARGET,
    CounterfactualRecord,
    EditorConfig,
    Intervention,
    InterventionError,
)
from .lexicon import Lexicon, LexiconError, default_lexicon, load_lexicon
from .metrics import (
    MetricsError,
    ReportRow,
    apply_audit,
    counterfactual_rates,
    reconstruction_rates,
    render_report,
    union_rates,
)
from .mockserve import serve_http, serve_stdio
from .protocol import (
    ConformanceError,
    EndpointError,
    EndpointSpec,
    ProtocolError,
    check_endpoint,
    load_mock_rules,
    make_endpoint,
)
from .reconstruction import default_templates, load_templates
from .runner import (
    build_search_vocab,
    run_counterfactual_test,
    run_reconstruction_test,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_ENDPOINT = 2
EXIT_DATA = 3

ALL_TESTS = ("counterfactual-rand", "counterfactual-edit", "reconstruction")


class ConfigError(Exception):
    pass


def load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"no such config file: {path}")
    cfg = yaml.safe_load(path.read_text(encoding="utf-8"))
    if not isinstance(cfg, dict):
        raise ConfigError("config file must hold a mapping")
    return cfg


def resolve_config(cfg: dict, base_dir: Path) -> dict:
    """Fill defaults, apply env overrides, and make paths absolute."""
    out = {
        "dataset": dict(cfg.get("dataset") or {}),
        "endpoint": dict(cfg.get("endpoint") or {}),
        "editor": dict(cfg.get("editor") or {}),
        "lexicon": dict(cfg.get("lexicon") or {}),
        "templates": cfg.get("templates"),
        "search_vocab": cfg.get("search_vocab"),
        "external_interventions": cfg.get("external_interventions"),
        "output_dir": cfg.get("output_dir", "out"),
        "seed": int(os.environ.get("NLECHECK_SEED", cfg.get("seed", 0))),
        "parallelism": int(cfg.get("parallelism", 1)),
        "tests": list(cfg.get("tests") or ALL_TESTS),
        "model_label": cfg.get("model_label", "model"),
        "dataset_label": cfg.get("dataset_label", "dataset"),
    }
    env_endpoint = os.environ.get("NLECHECK_ENDPOINT")
    if env_endpoint:
        out["endpoint"]["address"] = env_endpoint
    for key in ("path",):
        if key in out["dataset"]:
            out["dataset"][key] = str((base_dir / out["dataset"][key]).resolve())
    for key in ("templates", "search_vocab", "external_interventions"):
        if out[key]:
            out[key] = str((base_dir / out[key]).resolve())
    for key, value in list(out["lexicon"].items()):
        if value:
            out["lexicon"][key] = str((base_dir / value).resolve())
    if out["endpoint"].get("transport") in ("mock", "stdio") and out["endpoint"].get("address"):
        addr = out["endpoint"]["address"]
        if out["endpoint"]["transport"] == "mock":
            out["endpoint"]["address"] = str((base_dir / addr).resolve())
    unknown = [t for t in out["tests"] if t not in ALL_TESTS]
    if unknown:
        raise ConfigError(f"unknown tests {unknown}; choose from {list(ALL_TESTS)}")
    for req in ("path", "kind"):
        if not out["dataset"].get(req):
            raise ConfigError(f"config dataset.{req} is required")
    for req in ("transport", "address"):
        if not out["endpoint"].get(req):
            raise ConfigError(f"config endpoint.{req} is required")
    return out


def _load_lexicon_from(cfg: dict) -> Lexicon:
    lx = cfg.get("lexicon") or {}
    if lx.get("adjectives") or lx.get("adverbs") or lx.get("pos_table"):
        for req in ("adjectives", "adverbs", "pos_table"):
            if not lx.get(req):
                raise ConfigError(f"lexicon.{req} required when overriding the lexicon")
        return load_lexicon(lx["adjectives"], lx["adverbs"], lx["pos_table"])
    return default_lexicon()


def _editor_config(cfg: dict, mode: str, seed: int) -> EditorConfig:
    ed = cfg.get("editor") or {}
    return EditorConfig(
        n_positions=int(ed.get("n_positions", 4)),
        n_candidates=int(ed.get("n_candidates", 4)),
        max_insert_len=int(ed.get("max_insert_len", 3)),
        target_mode=ed.get(
            "rand_target_mode" if mode == "rand" else "edit_target_mode",
            ANY_FLIP if mode == "rand" else PER_TARGET,
        ),
        seed=seed,
    )


def _config_hash(cfg: dict) -> str:
    # output_dir and parallelism cannot change any result; keep the hash
    # stable across reruns into different directories.
    hashed = {k: v for k, v in cfg.items() if k not in ("output_dir", "parallelism")}
    canonical = json.dumps(hashed, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def cmd_run(args) -> int:
    cfg = resolve_config(load_config(args.config), Path(args.config).resolve().parent)
    if args.output_dir:
        cfg["output_dir"] = args.output_dir
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.parallelism is not None:
        cfg["parallelism"] = args.parallelism
    out_dir = Path(cfg["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)

    dataset = load_dataset(
        cfg["dataset"]["path"],
        TaskKind(cfg["dataset"]["kind"]),
        format=cfg["dataset"].get("format", "jsonl"),
        split=cfg["dataset"].get("split", "test"),
    )
    lex = _load_lexicon_from(cfg)
    templates = (
        load_templates(cfg["templates"]) if cfg.get("templates") else default_templates()
    )
    spec = EndpointSpec(
        transport=cfg["endpoint"]["transport"],
        address=cfg["endpoint"]["address"],
        timeout=float(cfg["endpoint"].get("timeout", 60)),
        retries=int(cfg["endpoint"].get("retries", 2)),
        max_parallel=int(cfg["endpoint"].get("max_parallel", 1)),
    )
    tests = [t for t in cfg["tests"]]
    if dataset.kind is TaskKind.QA and "reconstruction" in tests:
        print("note: skipping reconstruction (no rule for the QA task)", file=sys.stderr)
        tests = [t for t in tests if t != "reconstruction"]

    manifest = {
        "schema": "run-manifest/1",
        "harness_version": __version__,
        "config_sha256": _config_hash(cfg),
        "seed": cfg["seed"],
        "parallelism": cfg["parallelism"],
        "tests": {},
    }
    rows = []
    records_by_test = {}
    with make_endpoint(spec) as endpoint:
        caps = endpoint.handshake()
        if not caps.deterministic:
            print("error: endpoint declares deterministic=false; refusing to run", file=sys.stderr)
            return EXIT_ENDPOINT
        manifest["capabilities"] = caps.to_wire()

        vocab = None
        if "counterfactual-edit" in tests:
            if cfg.get("search_vocab"):
                vocab = sorted(
                    {
                        w.strip().lower()
                        for w in Path(cfg["search_vocab"]).read_text(encoding="utf-8").splitlines()
                        if w.strip()
                    }
                )
            else:
                vocab = build_search_vocab(dataset, lex)

        if cfg.get("external_interventions"):
            external = [
                Intervention.from_wire(obj)
                for obj in read_jsonl(cfg["external_interventions"])
            ]
            records = run_counterfactual_test(
                dataset, endpoint, _editor_config(cfg, "edit", cfg["seed"]),
                lex, "external", parallelism=cfg["parallelism"], external=external,
            )
            records_by_test["counterfactual-external"] = records
            write_jsonl((r.to_wire() for r in records), out_dir / "counterfactual_external.jsonl")
            manifest["tests"]["counterfactual-external"] = {
                "records": "counterfactual_external.jsonl",
                "n_total": len(records),
                "n_errored": sum(1 for r in records if r.errored),
            }

        for test in tests:
            if test == "counterfactual-rand":
                records = run_counterfactual_test(
                    dataset, endpoint, _editor_config(cfg, "rand", cfg["seed"]),
                    lex, "rand", parallelism=cfg["parallelism"],
                )
            elif test == "counterfactual-edit":
                records = run_counterfactual_test(
                    dataset, endpoint, _editor_config(cfg, "edit", cfg["seed"]),
                    lex, "edit", parallelism=cfg["parallelism"], vocab=vocab,
                )
            else:
                records = run_reconstruction_test(
                    dataset, endpoint, templates, lex, parallelism=cfg["parallelism"]
                )
            records_by_test[test] = records
            filename = test.replace("-", "_") + ".jsonl"
            write_jsonl((r.to_wire() for r in records), out_dir / filename)
            n_errored = sum(1 for r in records if r.errored)
            manifest["tests"][test] = {
                "records": filename,
                "n_total": len(records),
                "n_errored": n_errored,
            }

    model, ds_label = cfg["model_label"], cfg["dataset_label"]
    if "counterfactual-external" in records_by_test:
        rows.append(ReportRow(model, ds_label, "external",
                              counterfactual_rates(records_by_test["counterfactual-external"])))
    if "counterfactual-rand" in records_by_test:
        rows.append(ReportRow(model, ds_label, "rand",
                              counterfactual_rates(records_by_test["counterfactual-rand"])))
    if "counterfactual-edit" in records_by_test:
        rows.append(ReportRow(model, ds_label, "edit",
                              counterfactual_rates(records_by_test["counterfactual-edit"])))
    if "counterfactual-rand" in records_by_test and "counterfactual-edit" in records_by_test:
        rows.append(ReportRow(model, ds_label, "rand+edit",
                              union_rates(records_by_test["counterfactual-rand"],
                                          records_by_test["counterfactual-edit"])))
    if "reconstruction" in records_by_test:
        rows.append(ReportRow(model, ds_label, "-",
                              reconstruction_rates(records_by_test["reconstruction"])))

    (out_dir / "report.md").write_text(render_report(rows, "markdown"), encoding="utf-8")
    (out_dir / "report.json").write_text(render_report(rows, "json"), encoding="utf-8")
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
    print(f"run complete: {len(rows)} report row(s) in {out_dir}")
    return EXIT_OK


def _load_counterfactual_records(path) -> list:
    return [CounterfactualRecord.from_wire(obj) for obj in read_jsonl(path)]


def cmd_report(args) -> int:
    from .reconstruction import ReconstructionRecord

    rows = []
    for spec in args.records:
        parts = spec.split(":", 2)
        if len(parts) != 3:
            print("error: --records expects kind:editor:path", file=sys.stderr)
            return EXIT_USAGE
        kind, editor, path = parts
        if kind == "counterfactual":
            rows.append(ReportRow(args.model, args.dataset, editor,
                                  counterfactual_rates(_load_counterfactual_records(path))))
        elif kind == "reconstruction":
            records = [ReconstructionRecord.from_wire(o) for o in read_jsonl(path)]
            rows.append(ReportRow(args.model, args.dataset, "-", reconstruction_rates(records)))
        else:
            print(f"error: unknown record kind {kind!r}", file=sys.stderr)
            return EXIT_USAGE
    sys.stdout.write(render_report(rows, args.format))
    return EXIT_OK


def cmd_audit_export(args) -> int:
    records = _load_counterfactual_records(args.records)
    unfaithful = [r for r in records if r.unfaithful]
    if args.n > len(unfaithful):
        print(f"warning: only {len(unfaithful)} unfaithful records available", file=sys.stderr)
    selected = unfaithful[: args.n]
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["record_id", "inserted_words", "perturbed_nle", "paraphrase_present", "note"])
        for r in selected:
            iv = r.chosen_intervention
            writer.writerow([
                r.instance_id,
                " ".join(iv.words) if iv else "",
                (r.perturbed_output.nle if r.perturbed_output else "") or "",
                "",
                "",
            ])
    print(f"exported {len(selected)} audit row(s) to {args.out}")
    return EXIT_OK


def cmd_audit_import(args) -> int:
    records = _load_counterfactual_records(args.records)
    with open(args.audit, newline="", encoding="utf-8") as fh:
        audit_rows = [row for row in csv.DictReader(fh) if (row.get("paraphrase_present") or "").strip()]
    adjusted = apply_audit(records, audit_rows)
    write_jsonl((r.to_wire() for r in adjusted), args.out)
    rates = counterfactual_rates(adjusted)
    print(
        f"adjusted records written to {args.out}; "
        f"counter={rates.n_counter} unfaithful={rates.n_unfaithful}"
    )
    return EXIT_OK


def cmd_mock_serve(args) -> int:
    model = load_mock_rules(args.rules)
    if args.transport == "stdio":
        serve_stdio(model)
        return EXIT_OK
    serve_http(model, host=args.host, port=args.port)
    return EXIT_OK


def cmd_validate_endpoint(args) -> int:
    dataset = load_dataset(args.dataset, TaskKind(args.kind), format=args.format)
    spec = EndpointSpec(transport=args.transport, address=args.address,
                        timeout=args.timeout, retries=args.retries)
    with make_endpoint(spec) as endpoint:
        failures = check_endpoint(endpoint, dataset.instances, max_instances=args.n)
    if failures:
        for failure in failures:
            print(f"FAIL: {failure}", file=sys.stderr)
        return EXIT_ENDPOINT
    print(f"endpoint conforms ({min(args.n, len(dataset.instances))} instance(s) checked)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nlecheck",
        description="Faithfulness tests for natural language explanation models.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute the configured tests end to end")
    p.add_argument("--config", required=True)
    p.add_argument("--output-dir", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--parallelism", type=int, default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="render a report from record files")
    p.add_argument("--records", action="append", required=True,
                   help="kind:editor:path, e.g. counterfactual:rand:out/counterfactual_rand.jsonl")
    p.add_argument("--model", default="model")
    p.add_argument("--dataset", default="dataset")
    p.add_argument("--format", choices=("markdown", "csv", "json"), default="markdown")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("audit-export", help="export unfaithful records for manual audit")
    p.add_argument("--records", required=True)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_audit_export)

    p = sub.add_parser("audit-import", help="apply manual audit verdicts to records")
    p.add_argument("--records", required=True)
    p.add_argument("--audit", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_audit_import)

    p = sub.add_parser("mock-serve", help="serve the rule-based mock model")
    p.add_argument("--rules", required=True)
    p.add_argument("--transport", choices=("stdio", "http"), default="stdio")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8750)
    p.set_defaults(func=cmd_mock_serve)

    p = sub.add_parser("validate-endpoint", help="run the protocol conformance checks")
    p.add_argument("--transport", choices=("mock", "stdio", "http"), required=True)
    p.add_argument("--address", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--kind", choices=[k.value for k in TaskKind], required=True)
    p.add_argument("--format", default="jsonl")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--timeout", type=float, default=60.0)
    p.add_argument("--retries", type=int, default=2)
    p.set_defaults(func=cmd_validate_endpoint)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, LexiconError, MetricsError, InterventionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (EndpointError, ConformanceError, ProtocolError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ENDPOINT


if __name__ == "__main__":
    sys.exit(main())
