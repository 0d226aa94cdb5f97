"""Command line entry point: ``flowctx synth|split|encode|train|score|eval|compare``.

Exit codes: 0 success, 2 config error, 3 data error, 4 internal invariant violation.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import math
import sys
from pathlib import Path

from . import pipeline as pl
from .detector import format_table
from .flows import ColumnMap, FlowParseError, format_flows, read_flows
from .plotting import series_svg
from .synth import ScenarioError, generate, load_scenario
from .traces import write_traces

log = logging.getLogger("flowctx")

EXIT_CONFIG, EXIT_DATA, EXIT_INTERNAL = 2, 3, 4


def _float_or_inf(text: str) -> float:
    return math.inf if text.lower() in ("inf", "infinity", "none") else float(text)


def _add_input_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--column-map", type=Path, help="key=value file mapping input columns to flow fields")
    p.add_argument("--col", action="append", default=[], metavar="KEY=VALUE", help="column map entry")


def _add_encoding_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--kind", choices=pl.KINDS, default="contextual")
    p.add_argument("--k", type=int, default=25, help="cluster count for contextual encoding")
    p.add_argument("--transform", choices=pl.TRANSFORMS, default="log1p")
    p.add_argument("--cutoff", type=_float_or_inf, default=1000.0, help="frequency encoding cutoff ('inf' allowed)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-only", dest="transductive", action="store_false", help="fit the encoding on training flows only")


def _add_model_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--w", "--window", dest="w", type=int, default=10)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--min-count", type=int, default=10)
    p.add_argument("--epsilon", type=float, default=0.5)
    p.add_argument("--delta", type=float, default=3.0)


def _add_host_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--min-flows", type=int, default=1000)
    p.add_argument("--host-frac", type=float, default=0.25)
    p.add_argument("--min-flagged-traces", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowctx", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled flow CSV")
    p.add_argument("--scenario", required=True, help="scenario JSON path or bundled name (table1, cyclic_small, eval_medium)")
    p.add_argument("-o", "--output", type=Path, required=True)

    p = sub.add_parser("split", help="time-ordered train/test split of a flow CSV")
    p.add_argument("--flows", type=Path, required=True)
    p.add_argument("--train-fraction", type=float, default=0.5)
    p.add_argument("--benign-train", action="store_true", help="drop malicious flows from the training part")
    p.add_argument("--out-dir", type=Path, required=True)
    _add_input_opts(p)

    p = sub.add_parser("encode", help="fit encoding tables and write encoded flows")
    p.add_argument("--train", type=Path, required=True)
    p.add_argument("--test", type=Path)
    p.add_argument("--out-dir", type=Path, required=True)
    _add_input_opts(p)
    _add_encoding_opts(p)

    p = sub.add_parser("train", help="learn an automaton from benign flows")
    p.add_argument("--flows", type=Path, required=True)
    p.add_argument("--encoding", type=Path, required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--traces-out", type=Path, help="also dump training traces in the text trace format")
    _add_input_opts(p)
    _add_model_opts(p)

    p = sub.add_parser("score", help="score test flows against a trained automaton")
    p.add_argument("--flows", type=Path, required=True)
    p.add_argument("--encoding", type=Path, required=True)
    p.add_argument("--automaton", type=Path, required=True)
    p.add_argument("--threshold", type=Path, required=True)
    p.add_argument("--delta", type=float, help="override the threshold file's delta")
    p.add_argument("-o", "--output", type=Path, required=True)
    p.add_argument("--traces-out", type=Path)
    _add_input_opts(p)

    p = sub.add_parser("eval", help="metrics, table and probability plot for a score CSV")
    p.add_argument("--scores", type=Path, required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--threshold", type=Path, help="threshold JSON, drawn on the plot")
    p.add_argument("--flows", type=Path, help="flows behind the scores; enables host-level labeling")
    _add_input_opts(p)
    _add_host_opts(p)

    p = sub.add_parser("compare", help="run all three encodings on one dataset")
    p.add_argument("--flows", type=Path, required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--train-fraction", type=float, default=0.5)
    p.add_argument("--deltas", default="1,2,3", help="comma-separated delta sweep")
    _add_input_opts(p)
    _add_encoding_opts(p)
    _add_model_opts(p)
    return parser


def _config(args: argparse.Namespace) -> pl.PipelineConfig:
    names = {f.name for f in dataclasses.fields(pl.PipelineConfig)}
    given = {k: v for k, v in vars(args).items() if k in names and v is not None}
    return pl.PipelineConfig(**given).validate()


def _column_map(args) -> ColumnMap | None:
    try:
        pairs: list[str] = []
        if getattr(args, "column_map", None):
            pairs += args.column_map.read_text(encoding="utf-8").splitlines()
        pairs += getattr(args, "col", [])
        return ColumnMap.from_pairs(pairs) if pairs else None
    except (OSError, ValueError) as exc:
        raise pl.ConfigError(f"column map: {exc}") from exc


def _flows(path: Path, args):
    if not path.exists():
        raise pl.DataError(f"missing input file: {path}")
    result = read_flows(path, _column_map(args))
    if result.skipped:
        log.warning("%s: skipped %d unparseable rows", path, result.skipped)
    return result.records


def _read(path: Path) -> str:
    try:
        return path.read_text(encoding="utf-8")
    except OSError as exc:
        raise pl.DataError(f"missing input file: {path}") from exc


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def cmd_synth(args) -> None:
    try:
        spec = load_scenario(args.scenario)
    except OSError as exc:
        raise pl.DataError(f"cannot read scenario {args.scenario}: {exc}") from exc
    flows = generate(spec)
    _write(args.output, format_flows(flows))
    bad = sum(f.is_malicious for f in flows)
    print(f"wrote {len(flows)} flows ({bad} malicious) to {args.output}")


def cmd_split(args) -> None:
    if not 0 < args.train_fraction < 1:
        raise pl.ConfigError("train_fraction must be in (0, 1)")
    train, test = pl.split_flows(_flows(args.flows, args), args.train_fraction)
    if args.benign_train:
        train = [f for f in train if not f.is_malicious]
    _write(args.out_dir / "train.csv", format_flows(train))
    _write(args.out_dir / "test.csv", format_flows(test))
    print(f"train {len(train)} flows, test {len(test)} flows -> {args.out_dir}")


def cmd_encode(args) -> None:
    config = _config(args)
    train = _flows(args.train, args)
    test = _flows(args.test, args) if args.test else []
    bundle = pl.fit_bundle(train, test, config)
    out = args.out_dir
    _write(out / "encoding.json", bundle.to_json(config))
    _write(out / "train_encoded.csv", pl.encoded_csv(train, bundle, config))
    if args.test:
        _write(out / "test_encoded.csv", pl.encoded_csv(test, bundle, config))
    mode = "transductive" if config.transductive else "train-only"
    print(
        f"{config.kind} encoding ({mode}): {bundle.bytes_table.n_codes} bytes codes, "
        f"{bundle.duration_table.n_codes} duration codes -> {out}"
    )


def cmd_train(args) -> None:
    config = _config(args)
    bundle = pl.EncodingBundle.from_json(_read(args.encoding))
    flows = _flows(args.flows, args)
    result = pl.train(flows, bundle, config)
    out = args.out_dir
    _write(out / "automaton.json", pl.automaton_json(result, bundle, config))
    _write(out / "automaton.dot", result.automaton.to_dot())
    rows = [
        pl.ScoreRow(t.connection, t.start_index, s, s > result.threshold.value, t.malicious)
        for t, s in zip(result.traces, result.scores)
    ]
    _write(out / "train_scores.csv", pl.scores_csv(rows, config))
    _write(out / "threshold.json", pl.threshold_json(result.threshold, config))
    if args.traces_out:
        with open(args.traces_out, "w", encoding="utf-8") as fh:
            write_traces(result.traces, fh)
    th = result.threshold
    print(
        f"{len(result.traces)} traces, FPTA {result.fpta_states} states -> automaton {result.automaton.n_states} states; "
        f"threshold {th.value:.4f} (mu {th.mu:.4f}, sigma {th.sigma:.4f}, delta {th.delta})"
    )


def cmd_score(args) -> None:
    bundle = pl.EncodingBundle.from_json(_read(args.encoding))
    automaton, meta = pl.load_automaton(_read(args.automaton))
    pl.check_compatible(automaton, meta, bundle)
    threshold = pl.load_threshold(_read(args.threshold), args.delta)
    cfg = dict(meta.get("config", {}))
    if cfg.get("cutoff") == "inf":
        cfg["cutoff"] = math.inf
    config = dataclasses.replace(pl.PipelineConfig(**cfg), delta=threshold.delta).validate()
    flows = _flows(args.flows, args)
    rows = pl.score(automaton, bundle, flows, threshold, config)
    _write(args.output, pl.scores_csv(rows, config))
    if args.traces_out:
        with open(args.traces_out, "w", encoding="utf-8") as fh:
            write_traces(pl.make_traces(flows, bundle, config.w, config.stride), fh)
    if not rows:
        log.warning("no traces: every connection is shorter than the window (%d)", config.w)
        print("warning: no traces after windowing; wrote an empty score file")
        return
    flagged = sum(r.flag for r in rows)
    print(f"{len(rows)} traces scored, {flagged} flagged ({flagged / len(rows):.4f})")


def cmd_eval(args) -> None:
    config = _config(args)
    rows = pl.read_scores(_read(args.scores))
    report, excluded = pl.evaluate(rows, config)
    if excluded:
        print(f"excluded {excluded} unlabeled rows")
    threshold = pl.load_threshold(_read(args.threshold)).value if args.threshold else None
    tables = [("traces", report)]
    doc = {"meta": pl.provenance(config), "excluded_unlabeled": excluded, "traces": report.to_dict()}
    if args.flows:
        hosts = pl.evaluate_hosts(rows, _flows(args.flows, args), config)
        tables.append(("hosts", hosts))
        doc["hosts"] = hosts.to_dict()
    out = args.out_dir
    _write(out / "report.json", pl.dumps(doc))
    text = format_table(tables, first="Level")
    _write(out / "report.txt", text)
    labeled = [r for r in rows if r.label is not None]
    _write(
        out / "probabilities.svg",
        series_svg([r.nll for r in labeled], [bool(r.label) for r in labeled], threshold, metadata=pl.provenance(config)),
    )
    series = "index,nll,label\n" + "".join(f"{i},{r.nll!r},{int(bool(r.label))}\n" for i, r in enumerate(labeled))
    _write(out / "probabilities.csv", series)
    print(text, end="")


def cmd_compare(args) -> None:
    config = _config(args)
    try:
        deltas = [float(d) for d in args.deltas.split(",") if d.strip()]
    except ValueError as exc:
        raise pl.ConfigError(f"bad --deltas: {exc}") from exc
    if not deltas:
        raise pl.ConfigError("empty delta sweep")
    rows = pl.compare(_flows(args.flows, args), config, deltas)
    _write(args.out_dir / "compare.json", pl.compare_json(rows, config, deltas))
    text = format_table([(f"{r.kind} (delta={r.delta:g})", r.report) for r in rows])
    mode = "transductive" if config.transductive else "train-only"
    text += f"\nencoding fitted {mode}; best F1 over delta in {{{', '.join(f'{d:g}' for d in deltas)}}}\n"
    _write(args.out_dir / "compare.txt", text)
    print(text, end="")


COMMANDS = {
    "synth": cmd_synth,
    "split": cmd_split,
    "encode": cmd_encode,
    "train": cmd_train,
    "score": cmd_score,
    "eval": cmd_eval,
    "compare": cmd_compare,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except pl.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (pl.DataError, FlowParseError, ScenarioError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except AssertionError as exc:  # InvariantError and friends
        print(f"internal invariant violated: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return 0


if __name__ == "__main__":
    sys.exit(main())
