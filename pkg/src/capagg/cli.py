"""``capagg`` command line: synth, weights, train, evaluate, flops, report.

Exit codes: 0 success, 1 usage error, 2 data or validation error, 3 numeric
failure. ``CAPAGG_SEED`` overrides the seed of ``synth`` and ``train``.
Timestamps only ever go to the per-run log file, so every other output is
byte-identical across reruns.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import logging
import os
import sys
from pathlib import Path

from . import aggregation as agg
from .data import DataError, SynthSpec, load_corpus_dir, read_captions, synth_generate
from .evaluation import REPORT_COLUMNS, CostModel, RetrievalEvaluator, flops_estimate, flops_table, format_table
from .evaluation import reference_cost_model
from .model import CheckpointError, load_checkpoint, save_checkpoint
from .training import NumericError, TrainConfig, model_from_checkpoint, read_config_file, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
SEED_ENV = "CAPAGG_SEED"

log = logging.getLogger("capagg")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _seed_override() -> int | None:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw.strip() == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _attach_log(directory: Path, name: str) -> logging.Handler:
    directory.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(directory / name, mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("capagg")
    root.addHandler(handler)
    root.setLevel(logging.INFO)
    return handler


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    values = read_config_file(args.spec) if args.spec else {}
    seed = _seed_override()
    if seed is not None:
        values["seed"] = str(seed)
    spec = SynthSpec.from_mapping(values)
    out = Path(args.out)
    handler = _attach_log(out, "synth.log")
    try:
        corpus = synth_generate(spec, out)
        log.info("wrote %d images to %s", len(corpus), out)
    finally:
        logging.getLogger("capagg").removeHandler(handler)
        handler.close()
    print(f"{len(corpus)} images, {sum(r.num_captions for r in corpus)} captions -> {out}")
    return EXIT_OK


def cmd_weights(args) -> int:
    rows = read_captions(args.captions)
    out = []
    for i, (image_id, caps) in enumerate(rows):
        if len(caps) == 0:
            raise DataError(f"record {i} ({image_id}): no captions")
        w = agg.uniform_weights(1) if len(caps) == 1 else agg.uniqueness_weights(caps)
        out.append((image_id, w))
    agg.write_weight_sidecar(args.out, out)
    print(f"{len(out)} weight vectors -> {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    values = read_config_file(args.config) if args.config else {}
    if args.strategy:
        values["strategy"] = args.strategy
    seed = _seed_override()
    if seed is not None:
        values["seed"] = str(seed)
    config = TrainConfig.from_mapping(values)
    corpus = load_corpus_dir(args.data)
    cache = agg.read_weight_sidecar(args.weights) if args.weights else None

    out = Path(args.out)
    handler = _attach_log(out, "train.log")
    try:
        log.info("training %s on %s (%d images)", config.strategy, args.data, len(corpus))
        result = train(corpus, config, uniqueness_cache=cache, checkpoint_name="best.ckpt")
        save_checkpoint(out / "best.ckpt", result.checkpoint)
        _write(out / "report.txt", result.report.to_text())
        _write(out / "report.csv", result.report.to_csv())
        log.info("best epoch %d, score %r", result.report.best_epoch, result.report.best_score)
    finally:
        logging.getLogger("capagg").removeHandler(handler)
        handler.close()
    sys.stdout.write(result.report.to_text())
    return EXIT_OK


def _parse_ks(raw: str) -> tuple[int, ...]:
    try:
        ks = tuple(int(x) for x in raw.split(",") if x.strip())
    except ValueError:
        raise UsageError(f"--k expects comma-separated integers, got {raw!r}") from None
    if not ks or min(ks) < 1:
        raise UsageError("--k needs at least one positive integer")
    return ks


def _load_cost_model(path: str | None, m: int | None = None) -> CostModel:
    cost = CostModel.from_mapping(read_config_file(path)) if path else reference_cost_model()
    if m is not None:
        if m < 1:
            raise UsageError("--m must be at least 1")
        cost = CostModel(**{**{k: getattr(cost, k) for k in _COST_FIELDS}, "num_captions": m})
    return cost


_COST_FIELDS = ("image", "text_per_token", "projection", "weigher", "num_captions", "avg_caption_length",
                "text_base", "linear_weigher")


def cmd_evaluate(args) -> int:
    ks = _parse_ks(args.k)
    ckpt = load_checkpoint(args.checkpoint)
    corpus = load_corpus_dir(args.data)
    if args.subset == "validation":
        wanted = set(ckpt.extra.get("validation_ids", []))
        corpus = corpus.subset([i for i, r in enumerate(corpus) if r.image_id in wanted])
    if len(corpus) == 0:
        raise DataError("no images to evaluate")
    if max(ks) > len(corpus):
        raise DataError(f"K={max(ks)} exceeds the {len(corpus)} indexed images")
    model = model_from_checkpoint(ckpt)
    if model.dims.d_raw != corpus.image_dim or model.dims.d != corpus.text_dim:
        raise DataError(
            f"checkpoint expects image/text dims {model.dims.d_raw}/{model.dims.d}, "
            f"data has {corpus.image_dim}/{corpus.text_dim}"
        )
    metrics = RetrievalEvaluator(corpus).evaluate(model, ks)
    strategy = ckpt.extra.get("strategy", "unknown")
    row = {"strategy": strategy, **metrics}
    cost = _load_cost_model(args.cost_model)
    row["flops"] = flops_estimate(strategy, cost) if strategy in agg.Strategy._value2member_map_ else float("nan")
    columns = ("strategy",) + tuple(c for k in ks for c in (f"bleu4@{k}", f"map@{k}")) + ("flops",)
    text, csv_text = format_table([row], columns)

    out = Path(args.out) if args.out else Path(args.checkpoint).parent
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "eval.txt", text)
    _write(out / "eval.csv", csv_text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_flops(args) -> int:
    cost = _load_cost_model(args.cost_model, args.m)
    rows = [{"strategy": s, "flops": v} for s, v in flops_table(cost).items()]
    text, csv_text = format_table(rows, ("strategy", "flops"))
    sys.stdout.write(csv_text if args.csv else text)
    return EXIT_OK


def cmd_report(args) -> int:
    runs = Path(args.runs)
    if not runs.is_dir():
        raise DataError(f"{runs} is not a directory")
    rows = []
    for path in sorted(runs.glob("*/eval.csv")):
        with path.open(newline="", encoding="utf-8") as f:
            for rec in csv.DictReader(f):
                row = {"run": path.parent.name}
                for key, value in rec.items():
                    row[key] = value if key == "strategy" else float(value)
                rows.append(row)
    if not rows:
        raise DataError(f"no */eval.csv files under {runs}")
    columns = ("run",) + REPORT_COLUMNS
    text, csv_text = format_table(rows, columns)
    _write(runs / "report.txt", text)
    _write(runs / "report.csv", csv_text)
    sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="capagg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic redundant-caption corpus")
    p.add_argument("--spec", help="key = value file of generator settings")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("weights", help="write uniqueness weights for every caption set")
    p.add_argument("--captions", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_weights)

    p = sub.add_parser("train", help="train one strategy and keep the best checkpoint")
    p.add_argument("--config", help="key = value training config")
    p.add_argument("--strategy", choices=[s.value for s in agg.Strategy])
    p.add_argument("--data", required=True, help="corpus directory")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--weights", help="precomputed uniqueness sidecar")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="retrieval metrics for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--k", default="5,20")
    p.add_argument("--subset", choices=("all", "validation"), default="all")
    p.add_argument("--cost-model", help="key = value cost file (default: reference calibration)")
    p.add_argument("--out", help="where eval.txt/eval.csv go (default: checkpoint directory)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("flops", help="per-strategy inference FLOPS")
    p.add_argument("--cost-model")
    p.add_argument("--m", type=int)
    p.add_argument("--csv", action="store_true")
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("report", help="merge run directories' eval.csv into one table")
    p.add_argument("--runs", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"capagg: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, CheckpointError, FileNotFoundError, configparser.Error, ValueError, KeyError) as exc:
        print(f"capagg: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
