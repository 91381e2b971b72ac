"""Command-line interface.

Exit codes: 0 success, 1 runtime failure, 2 usage error. Any flag can also be
given in a JSON/YAML file passed with ``--config`` (keys are flag names with
underscores); flags on the command line win.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from .attention import (
    AttentionError,
    CalibrationReport,
    binned_profile,
    load_attention_traces,
    scores_by_tag,
    select_format,
)
from .backends import (
    Backend,
    BackendError,
    MockBackend,
    MockModelConfig,
    RecordingBackend,
    RemoteBackend,
    ReplayBackend,
)
from .dataset import Dataset, DatasetError, KvGenConfig, generate_kv_dataset, load_qa_dataset, save_dataset
from .harness import (
    CALIBRATION_SCHEMA,
    EXPERIMENT_SCHEMA,
    PIPELINE_SCHEMA,
    TOKENIZATION_SCHEMA,
    ExperimentResult,
    HarnessError,
    PermutationPlan,
    calibrate,
    calibration_to_dict,
    read_json,
    run_cnorm_pipeline,
    run_permutation_experiment,
    run_tokenization_study,
    write_json,
)
from .metrics import MetricError
from .normalizer import DEFAULT_DELIMITERS, FormatConfig, FormatError, PromptTemplate, candidate_formats

log = logging.getLogger("ctxnorm")

RUNTIME_ERRORS = (
    AttentionError, BackendError, DatasetError, FormatError, HarnessError, MetricError, OSError,
)


class UsageError(Exception):
    pass


# --- argument helpers ---------------------------------------------------------


def _int_list(s: str) -> list[int]:
    return [int(x) for x in s.split(",") if x.strip()]


def _delim_list(s: str) -> list[str]:
    # Comma is the separator; a literal comma delimiter is written as "comma".
    return ["," if x == "comma" else x for x in (p.strip() for p in s.split(",")) if x]


def _add_output(p: argparse.ArgumentParser) -> None:
    p.add_argument("-o", "--out", type=Path, help="output file")
    p.add_argument("--force", action="store_true", help="overwrite an existing output file")


def _add_data(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("dataset (one source)")
    g.add_argument("--dataset", type=Path, help="JSON-lines dataset file")
    g.add_argument("--kv-pairs", type=int, help="generate KV data: pairs per sample")
    g.add_argument("--kv-chars", type=int, help="generate KV data: characters per key/value")
    g.add_argument("--kv-n", type=int, help="generate KV data: number of samples")
    g.add_argument("--kv-seed", type=int, help="generate KV data: seed")


def _add_backend(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("backend")
    g.add_argument("--backend", choices=("mock", "replay", "remote"), help="model backend kind")
    g.add_argument("--mock-config", type=Path, help="mock model config (JSON)")
    g.add_argument("--trace", type=Path, help="trace file to replay")
    g.add_argument("--endpoint", help="remote base URL (default $CTXNORM_ENDPOINT)")
    g.add_argument("--timeout", type=float, default=120.0)
    g.add_argument("--record-trace", type=Path, help="write a replayable trace of this run")


def _add_prompting(p: argparse.ArgumentParser) -> None:
    p.add_argument("--template", type=Path, help="prompt template file with {question} and {documents}")
    p.add_argument("--template-kind", choices=("base", "aligned"), default="base")
    p.add_argument("--selection-seed", type=int, default=0)


def _add_plan(p: argparse.ArgumentParser) -> None:
    p.add_argument("--positions", type=_int_list, help="gold positions, e.g. 0,4,9 (default: all)")
    p.add_argument("--seeds", type=_int_list, default=[0], help="distractor shuffle seeds")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--strict", action="store_true", help="abort on the first backend failure")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctxnorm", description=__doc__.splitlines()[0])
    parser.add_argument("--config", type=Path, help="JSON/YAML file with flag values")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-kv", help="generate a synthetic key-value dataset")
    p.add_argument("--pairs", type=int, help="key-value pairs per sample (required)")
    p.add_argument("--chars", type=int, help="characters per key and value (required)")
    p.add_argument("--n", type=int, help="number of samples (required)")
    p.add_argument("--seed", type=int, help="PRNG seed (required)")
    _add_output(p)

    p = sub.add_parser("calibrate", help="select a delimiter by mean Attention Balance Score")
    _add_data(p)
    _add_backend(p)
    _add_prompting(p)
    p.add_argument("--delimiters", type=_delim_list, default=list(DEFAULT_DELIMITERS))
    p.add_argument("--ratio", type=float, default=0.5)
    p.add_argument("--samples", type=int, default=8)
    p.add_argument("--mode", choices=("eval", "heldout"), default="eval")
    p.add_argument("--heldout", type=Path, help="calibration dataset for --mode heldout")
    _add_output(p)

    p = sub.add_parser("run-perm", help="gold-position permutation experiment")
    _add_data(p)
    _add_backend(p)
    _add_prompting(p)
    _add_plan(p)
    p.add_argument("--delimiter", default="none")
    p.add_argument("--ratio", type=float, default=0.5)
    _add_output(p)

    p = sub.add_parser("pipeline", help="calibrate, then run the permutation experiment with the chosen format")
    _add_data(p)
    _add_backend(p)
    _add_prompting(p)
    _add_plan(p)
    p.add_argument("--delimiters", type=_delim_list, default=list(DEFAULT_DELIMITERS))
    p.add_argument("--ratio", type=float, default=0.5)
    p.add_argument("--samples", type=int, default=8)
    p.add_argument("--mode", choices=("eval", "heldout"), default="eval")
    p.add_argument("--heldout", type=Path)
    p.add_argument("--no-baseline", action="store_true")
    _add_output(p)

    p = sub.add_parser("tok-study", help="token count vs OAA across delimiters")
    _add_data(p)
    _add_backend(p)
    _add_prompting(p)
    _add_plan(p)
    p.add_argument("--delimiters", type=_delim_list, default=["-", ":", "&", "_", "+"])
    p.add_argument("--ratio", type=float, default=1.0)
    _add_output(p)

    p = sub.add_parser("report", help="summarize result files")
    p.add_argument("--in", dest="inputs", type=Path, nargs="+", required=True)
    p.add_argument("--csv", type=Path, help="also write the table as CSV")
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("abs", help="Attention Balance Scores from an attention trace")
    p.add_argument("--trace", type=Path, required=True)
    p.add_argument("--bins", type=int, default=0, help="also print mean binned attention profiles")
    return parser


def _load_config_file(path: Path) -> dict[str, Any]:
    text = path.read_text(encoding="utf-8")
    if path.suffix in (".yaml", ".yml"):
        import yaml

        data = yaml.safe_load(text) or {}
    else:
        data = json.loads(text)
    if not isinstance(data, dict):
        raise UsageError(f"config file {path} must hold a mapping")
    return {k.replace("-", "_"): v for k, v in data.items()}


def parse_args(argv: Sequence[str] | None) -> argparse.Namespace:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", type=Path)
    known, _ = pre.parse_known_args(argv)
    if known.config is None:
        return parser.parse_args(argv)
    try:
        cfg = _load_config_file(known.config)
    except (OSError, ValueError, UsageError) as e:
        parser.error(f"cannot read config: {e}")
    # File values become defaults of the chosen subcommand; explicit flags override them.
    args = parser.parse_args(argv)
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    subparser = sub.choices[args.command]
    dests = {a.dest: a for a in subparser._actions}
    unknown = sorted(set(cfg) - set(dests))
    if unknown:
        parser.error(f"unknown config keys for {args.command}: {unknown}")
    for key, value in cfg.items():
        action = dests[key]
        if isinstance(value, str) and action.type is not None:
            value = action.type(value)
        subparser.set_defaults(**{key: value})
    return parser.parse_args(argv)


# --- builders -------------------------------------------------------------------


def make_dataset(args: argparse.Namespace) -> Dataset:
    kv = [args.kv_pairs, args.kv_chars, args.kv_n, args.kv_seed]
    if args.dataset is not None and any(x is not None for x in kv):
        raise UsageError("give either --dataset or --kv-* parameters, not both")
    if args.dataset is not None:
        return load_qa_dataset(args.dataset)
    if all(x is not None for x in kv):
        return generate_kv_dataset(KvGenConfig(*kv))
    if any(x is not None for x in kv):
        raise UsageError("--kv-pairs, --kv-chars, --kv-n and --kv-seed go together")
    raise UsageError("no dataset: pass --dataset or --kv-* parameters")


def make_backend(args: argparse.Namespace) -> Backend:
    if args.backend is None:
        raise UsageError("--backend is required")
    if args.backend == "mock":
        cfg = MockModelConfig.from_file(args.mock_config) if args.mock_config else MockModelConfig()
        backend: Backend = MockBackend(cfg)
    elif args.backend == "replay":
        if args.trace is None:
            raise UsageError("--backend replay needs --trace")
        backend = ReplayBackend.from_file(args.trace)
    else:
        backend = RemoteBackend(args.endpoint, timeout=args.timeout)
    if getattr(args, "record_trace", None) is not None:
        backend = RecordingBackend(backend, args.record_trace)
    return backend


def make_template(args: argparse.Namespace) -> PromptTemplate:
    if args.template is not None:
        return PromptTemplate.from_file(args.template)
    return PromptTemplate.builtin(args.template_kind)


def make_plan(args: argparse.Namespace, dataset: Dataset) -> PermutationPlan:
    plan = PermutationPlan.all_positions(dataset, args.seeds)
    if args.positions:
        plan = PermutationPlan(tuple(args.positions), tuple(args.seeds))
    return plan


def _check_out(args: argparse.Namespace) -> None:
    if args.out is None:
        raise UsageError("-o/--out is required")
    if args.out.exists() and not args.force:
        raise HarnessError(f"{args.out} exists; pass --force to overwrite")


# --- tables -------------------------------------------------------------------------


def format_table(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    def cell(x: Any) -> str:
        return f"{x:.4f}" if isinstance(x, float) else str(x)

    body = [[cell(x) for x in r] for r in rows]
    widths = [max(len(str(h)), *(len(r[i]) for r in body)) if body else len(str(h)) for i, h in enumerate(header)]
    # first column is a label and reads left-aligned; the rest are numbers
    lines = ["  ".join(str(h).ljust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))) for r in body]
    return "\n".join(ln.rstrip() for ln in lines)


def experiment_table(results: Sequence[tuple[str, ExperimentResult]]) -> tuple[list[str], list[list[Any]]]:
    """Rows per gold position, one column per result; a delta column for two results."""
    header = ["position"] + [name for name, _ in results]
    if len(results) == 2:
        header.append("delta")
    positions = results[0][1].positions
    for _, r in results[1:]:
        if r.positions != positions:
            raise HarnessError("results use different gold positions")
    rows: list[list[Any]] = []
    accs = [r.position_accuracy.per_position for _, r in results]
    for i, p in enumerate(positions):
        row: list[Any] = [p] + [a[i] for a in accs]
        if len(results) == 2:
            row.append(accs[1][i] - accs[0][i])
        rows.append(row)
    for label, attr in (("OAA", "oaa"), ("OPA", "opa")):
        vals = [getattr(r, attr) for _, r in results]
        row = [label] + vals
        if len(results) == 2:
            row.append(vals[1] - vals[0])
        rows.append(row)
    return header, rows


def _experiment_from_file(doc: dict[str, Any]) -> list[tuple[str, ExperimentResult]]:
    schema = doc.get("schema")
    if schema == EXPERIMENT_SCHEMA:
        r = ExperimentResult.from_dict(doc)
        return [(r.config.get("format", {}).get("delimiter", "?"), r)]
    if schema == PIPELINE_SCHEMA:
        out = []
        if doc.get("baseline"):
            out.append(("baseline", ExperimentResult.from_dict(doc["baseline"])))
        out.append(("c-norm", ExperimentResult.from_dict(doc["result"])))
        return out
    return []


def report_tables(docs: Sequence[tuple[Path, dict[str, Any]]]) -> list[tuple[list[str], list[list[Any]]]]:
    tables = []
    experiments: list[tuple[str, ExperimentResult]] = []
    for path, doc in docs:
        schema = doc.get("schema")
        if schema in (EXPERIMENT_SCHEMA, PIPELINE_SCHEMA):
            for name, r in _experiment_from_file(doc):
                label = name if len(docs) == 1 else f"{path.stem}:{name}"
                experiments.append((label, r))
            if schema == PIPELINE_SCHEMA:
                tables.append(_calibration_table(CalibrationReport.from_dict(doc["calibration"])))
        elif schema == CALIBRATION_SCHEMA:
            tables.append(_calibration_table(CalibrationReport.from_dict(doc)))
        elif schema == TOKENIZATION_SCHEMA:
            rows = [[r["delimiter"], r["mean_token_count"], r["oaa"], r["opa"]] for r in doc["rows"]]
            rows.append(["pearson_r", doc["pearson_r"], "", ""])
            tables.append((["delimiter", "mean_tokens", "OAA", "OPA"], rows))
        else:
            raise HarnessError(f"{path}: unrecognized schema {schema!r}")
    if experiments:
        tables.insert(0, experiment_table(experiments))
    return tables


def _calibration_table(rep: CalibrationReport) -> tuple[list[str], list[list[Any]]]:
    means = rep.mean_abs
    rows = [[c.delimiter, c.ratio, means[c.tag], "*" if c == rep.selected else ""] for c in rep.candidates]
    return ["delimiter", "ratio", "mean_ABS", "selected"], rows


# --- commands ---------------------------------------------------------------------


def cmd_gen_kv(args: argparse.Namespace) -> int:
    missing = [f"--{k}" for k in ("pairs", "chars", "n", "seed") if getattr(args, k) is None]
    if missing:
        raise UsageError(f"missing required flags: {', '.join(missing)}")
    _check_out(args)
    ds = generate_kv_dataset(KvGenConfig(args.pairs, args.chars, args.n, args.seed))
    save_dataset(ds, args.out)
    print(f"wrote {len(ds)} samples to {args.out}")
    return 0


def _finish(backend: Backend) -> None:
    backend.close()
    if isinstance(backend, RecordingBackend) and backend.path is not None:
        print(f"trace written to {backend.path}", file=sys.stderr)


def cmd_calibrate(args: argparse.Namespace) -> int:
    _check_out(args)
    dataset = make_dataset(args)
    heldout = load_qa_dataset(args.heldout) if args.heldout else None
    backend = make_backend(args)
    try:
        rep = calibrate(
            dataset, backend, candidate_formats(args.delimiters, args.ratio), args.samples, args.mode,
            heldout=heldout, template=make_template(args), selection_seed=args.selection_seed,
        )
    finally:
        _finish(backend)
    write_json(calibration_to_dict(rep, backend.describe()), args.out)
    print(format_table(*_calibration_table(rep)))
    print(f"selected delimiter: {rep.selected.delimiter} (ratio {rep.selected.ratio:g})")
    return 0


def cmd_run_perm(args: argparse.Namespace) -> int:
    _check_out(args)
    dataset = make_dataset(args)
    backend = make_backend(args)
    try:
        res = run_permutation_experiment(
            dataset, backend, FormatConfig(args.delimiter, args.ratio), make_plan(args, dataset),
            template=make_template(args), selection_seed=args.selection_seed,
            strict=args.strict, workers=args.workers,
        )
    finally:
        _finish(backend)
    write_json(res.to_dict(), args.out)
    print(format_table(*experiment_table([(args.delimiter, res)])))
    if res.failures:
        print(f"warning: {res.failures} cells failed and were counted as incorrect", file=sys.stderr)
    return 0


def cmd_pipeline(args: argparse.Namespace) -> int:
    _check_out(args)
    dataset = make_dataset(args)
    heldout = load_qa_dataset(args.heldout) if args.heldout else None
    backend = make_backend(args)
    try:
        out = run_cnorm_pipeline(
            dataset, backend, candidate_formats(args.delimiters, args.ratio), args.samples,
            make_plan(args, dataset), mode=args.mode, heldout=heldout, template=make_template(args),
            selection_seed=args.selection_seed, baseline=not args.no_baseline,
            workers=args.workers, strict=args.strict,
        )
    finally:
        _finish(backend)
    doc = out.to_dict()
    write_json(doc, args.out)
    for table in report_tables([(args.out, doc)]):
        print(format_table(*table))
        print()
    return 0


def cmd_tok_study(args: argparse.Namespace) -> int:
    _check_out(args)
    dataset = make_dataset(args)
    backend = make_backend(args)
    try:
        rep = run_tokenization_study(
            dataset, backend, args.delimiters, make_plan(args, dataset),
            ratio=args.ratio, template=make_template(args), workers=args.workers,
        )
    finally:
        _finish(backend)
    doc = rep.to_dict()
    write_json(doc, args.out)
    print(format_table(*report_tables([(args.out, doc)])[0]))
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    docs = [(p, read_json(p)) for p in args.inputs]
    tables = report_tables(docs)
    for table in tables:
        print(format_table(*table))
        print()
    if args.csv is not None:
        if args.csv.exists() and not args.force:
            raise HarnessError(f"{args.csv} exists; pass --force to overwrite")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(tables[0][0])
        w.writerows(tables[0][1])
        args.csv.write_text(buf.getvalue(), encoding="utf-8")
    return 0


def cmd_abs(args: argparse.Namespace) -> int:
    vectors = load_attention_traces(args.trace)
    if not vectors:
        raise AttentionError(f"{args.trace} holds no attention records")
    grouped = scores_by_tag(vectors)
    best = select_format(grouped)
    rows = []
    for tag, rs in sorted(grouped.items()):
        rows.append([tag, len(rs), sum(r.score for r in rs) / len(rs), "*" if tag == best else ""])
    print(format_table(["format", "prompts", "mean_ABS", "best"], rows))
    if args.bins:
        print()
        prof_rows = []
        for tag in sorted(grouped):
            profs = [binned_profile(v, args.bins) for v in vectors if v.format_tag == tag]
            prof_rows.append([tag] + [sum(p[i] for p in profs) / len(profs) for i in range(len(profs[0]))])
        print(format_table(["format"] + [f"bin{i}" for i in range(len(prof_rows[0]) - 1)], prof_rows))
    return 0


COMMANDS = {
    "gen-kv": cmd_gen_kv,
    "calibrate": cmd_calibrate,
    "run-perm": cmd_run_perm,
    "pipeline": cmd_pipeline,
    "tok-study": cmd_tok_study,
    "report": cmd_report,
    "abs": cmd_abs,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"ctxnorm {args.command}: error: {e}", file=sys.stderr)
        return 2
    except RUNTIME_ERRORS as e:
        print(f"ctxnorm {args.command}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
