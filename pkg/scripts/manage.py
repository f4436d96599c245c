from __future__ import annotations

import argparse
import json
import logging
import sys
import uuid
from collections.abc import Callable, Sequence
from pathlib import Path
from typing import Any

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

import numpy as np  # noqa: E402
from pydantic import ValidationError  # noqa: E402

from core.errors import EmptyInput, InvariantViolation, IoFailure, MstError  # noqa: E402
from core.exporter import build_history_workbook, build_stats_workbook  # noqa: E402
from core.logging_utils import configure_logging, set_run_id  # noqa: E402
from core.models.dataset import DatasetMetadata  # noqa: E402
from core.models.roll import ConversionConfig, PianoRollPhrase  # noqa: E402
from core.models.training import TrainingConfig  # noqa: E402
from core.nn import run_gradcheck_suite  # noqa: E402
from core.services.checkpoint import load_checkpoint  # noqa: E402
from core.services.cyclegan import Direction, build_model, cycle, transfer_many  # noqa: E402
from core.services.dataset import (  # noqa: E402
    build_dataset,
    convert_corpus,
    dataset_stats,
    load_annotations,
    load_dataset,
    save_dataset,
)
from core.services.midi_io import parse_smf, read_midi_file, validate_smf, write_smf  # noqa: E402
from core.services.pianoroll import midi_to_phrases, phrases_to_midi  # noqa: E402
from core.services.training import LATEST_CHECKPOINT, train, write_history_csv  # noqa: E402
from core.settings import get_settings  # noqa: E402
from core.utils.files import atomic_write  # noqa: E402
from core.utils.keyvalue import parse_key_values  # noqa: E402

logger = logging.getLogger("mst_cli.manage")

# TrainingConfig fields settable from the train subcommand
TRAIN_OPTIONS = (
    "epochs",
    "batch_size",
    "lambda_cycle",
    "gamma_mixed",
    "lr",
    "beta1",
    "beta2",
    "seed",
    "checkpoint_every",
    "residual_blocks",
    "base_filters",
    "discriminator_noise",
)


class _Explicit(argparse.Action):
    """Store action that remembers which options were given on the command line."""

    def __call__(self, parser, namespace, values, option_string=None):  # type: ignore[override]
        setattr(namespace, self.dest, values)
        given = set(getattr(namespace, "explicit", None) or ())
        given.add(self.dest)
        namespace.explicit = given


def _resolve(args: argparse.Namespace, names: Sequence[str]) -> dict[str, Any]:
    """flags > --config file > argparse defaults (which carry env and model defaults)."""
    values = {name: getattr(args, name) for name in names}
    if args.config:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise IoFailure(f"cannot read config {args.config}: {exc}") from exc
        try:
            from_file = parse_key_values(text)
        except ValueError as exc:
            raise MstError(str(exc), code="BadConfig").at(args.config) from exc
        for key, value in from_file.items():
            if key in values:
                values[key] = value
            else:
                logger.debug("config key %s not used by %s", key, args.cmd)
    for name in getattr(args, "explicit", None) or ():
        if name in values:
            values[name] = getattr(args, name)
    return values


def _write_midi_checked(phrases: Sequence[PianoRollPhrase], path: Path) -> None:
    data = write_smf(phrases_to_midi(phrases))
    report = validate_smf(data)
    if not report.is_valid or report.has("unmatched-note-on"):
        codes = ", ".join(i.code for i in report.issues)
        raise InvariantViolation(f"refusing to write invalid MIDI ({codes})").at(path)
    try:
        atomic_write(path, data)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def cmd_build_dataset(args: argparse.Namespace) -> int:
    opts = _resolve(args, ("seed", "workers"))
    seed, workers = int(opts["seed"]), int(opts["workers"])
    annotations = load_annotations(args.annotations)
    conversion = convert_corpus(args.midi_dir, ConversionConfig(), workers=workers)
    metadata = DatasetMetadata(
        source=str(args.midi_dir),
        config=ConversionConfig().model_dump(),
        files_read=conversion.files_read,
        files_rejected=conversion.files_rejected,
        empty_windows_dropped=conversion.empty_windows,
    )
    ds = build_dataset(conversion.pieces, annotations, seed, metadata=metadata)
    out = save_dataset(ds, args.out)
    print(f"files read: {conversion.files_read}")
    print(f"rejected: {conversion.files_rejected}")
    print(f"rejected non-4/4: {len(conversion.rejected_non_four_four)}")
    print(f"rejected unparsable: {len(conversion.rejected_unparsable)}")
    print(f"viable files: {len(conversion.pieces)}")
    print(f"phrases before balancing: negative={ds.metadata.raw_negative} positive={ds.metadata.raw_positive}")
    print(f"phrases after balancing: negative={len(ds.negative)} positive={len(ds.positive)}")
    print(f"empty windows dropped: {conversion.empty_windows}")
    print(f"dataset: {out}")
    return 0


def _progress(epoch: int, batch: int, losses: dict[str, float]) -> None:
    logger.debug(
        "batch done",
        extra={"epoch": epoch, "batch": batch, "metrics": {"d_total": losses["d_total"], "g_total": losses["g_total"]}},
    )


def cmd_train(args: argparse.Namespace) -> int:
    cfg = TrainingConfig.model_validate(_resolve(args, TRAIN_OPTIONS))
    print(
        f"training: epochs={cfg.epochs} lambda_cycle={cfg.lambda_cycle} gamma_mixed={cfg.gamma_mixed} "
        f"batch_size={cfg.batch_size} lr={cfg.lr} seed={cfg.seed} residual_blocks={cfg.residual_blocks} "
        f"base_filters={cfg.base_filters}",
        file=sys.stderr,
    )
    dataset = load_dataset(args.dataset)
    out_dir = Path(args.out_dir)
    model = build_model(cfg, np.random.default_rng(cfg.seed))
    start_epoch = 0
    if args.resume:
        latest = out_dir / LATEST_CHECKPOINT
        if not latest.exists():
            raise IoFailure(f"--resume given but {latest} does not exist").at(latest)
        try:
            load_checkpoint(latest, into=model)
        except MstError as exc:
            raise exc.at(latest)
        start_epoch = model.epochs_trained
        logger.info("resuming", extra={"epoch": start_epoch, "path": str(latest)})
    result = train(model, dataset, cfg, _progress, checkpoint_dir=out_dir, start_epoch=start_epoch)
    history_path = write_history_csv(result.history, out_dir / "history.csv", append=args.resume)
    print(f"epochs run: {result.epochs_run}")
    print(f"stopped early: {str(result.stopped_early).lower()}")
    print(f"checkpoint: {out_dir / LATEST_CHECKPOINT}")
    print(f"history: {history_path}")
    if args.xlsx:
        xlsx_path = out_dir / "history.xlsx"
        try:
            atomic_write(xlsx_path, build_history_workbook(result.history).getvalue())
        except OSError as exc:
            raise IoFailure(f"cannot write {xlsx_path}: {exc}") from exc
        print(f"history workbook: {xlsx_path}")
    return 0


def cmd_transfer(args: argparse.Namespace) -> int:
    direction = Direction(args.direction)
    try:
        model = load_checkpoint(args.checkpoint)
    except MstError as exc:
        raise exc.at(args.checkpoint)
    try:
        phrases = midi_to_phrases(read_midi_file(args.input))
    except MstError as exc:
        raise exc.at(args.input)
    if not phrases:
        raise EmptyInput("input has no non-empty 64-step phrase").at(args.input)
    out_phrases = transfer_many(model, phrases, direction)
    _write_midi_checked(out_phrases, Path(args.out))
    print(f"phrases: {len(out_phrases)}")
    print(f"output: {args.out}")
    if args.cycle_out:
        _write_midi_checked([cycle(model, p, direction) for p in phrases], Path(args.cycle_out))
        print(f"cycle output: {args.cycle_out}")
    return 0


def cmd_validate(args: argparse.Namespace) -> int:
    try:
        data = Path(args.path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {args.path}: {exc}") from exc
    report = validate_smf(data)
    for issue in report.issues:
        where = f" at offset {issue.offset}" if issue.offset is not None else ""
        print(f"{issue.severity.value}: {issue.code}{where}: {issue.message}")
    print("valid" if report.is_valid else "invalid")
    return 0 if report.is_valid else 1


def cmd_roundtrip(args: argparse.Namespace) -> int:
    try:
        phrases = midi_to_phrases(read_midi_file(args.path))
    except MstError as exc:
        raise exc.at(args.path)
    if not phrases:
        raise EmptyInput("file has no non-empty 64-step phrase").at(args.path)
    again = midi_to_phrases(parse_smf(write_smf(phrases_to_midi(phrases))))
    if again != phrases:
        raise InvariantViolation(f"round trip changed the phrases ({len(phrases)} in, {len(again)} out)").at(args.path)
    print(f"OK, {len(phrases)} phrases, exact match")
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    try:
        stats = dataset_stats(load_dataset(args.dataset))
    except MstError as exc:
        raise exc.at(args.dataset)
    print(json.dumps(stats.model_dump(mode="json"), indent=2, sort_keys=True))
    if args.xlsx:
        try:
            atomic_write(Path(args.xlsx), build_stats_workbook(stats).getvalue())
        except OSError as exc:
            raise IoFailure(f"cannot write {args.xlsx}: {exc}") from exc
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    opts = _resolve(args, ("trials", "tolerance", "seed"))
    suite = run_gradcheck_suite(trials=int(opts["trials"]), tolerance=float(opts["tolerance"]), seed=int(opts["seed"]))
    for name, err in suite.worst().items():
        status = "PASS" if err <= suite.tolerance else "FAIL"
        print(f"{name}: max rel error {err:.3e} {status}")
    print("all layers pass" if suite.passed else "gradient check FAILED")
    return 0 if suite.passed else 2


def _add(parser: argparse.ArgumentParser, *flags: str, **kwargs: Any) -> None:
    parser.add_argument(*flags, action=_Explicit, **kwargs)


def build_parser() -> argparse.ArgumentParser:
    settings = get_settings()
    defaults = TrainingConfig()
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(
        prog="mst", description="Music sentiment transfer: datasets, training and transfer", formatter_class=fmt
    )
    parser.add_argument("--config", default=None, help="key=value file; command-line flags override it")
    parser.add_argument("--json-logs", action="store_true", default=settings.json_logs, help="JSON log lines on stderr")
    parser.add_argument(
        "--log-level",
        default=settings.log_level,
        choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"],
        help="log level",
    )
    sub = parser.add_subparsers(dest="cmd", required=True)

    p_build = sub.add_parser("build-dataset", help="Convert a MIDI corpus into a balanced dataset", formatter_class=fmt)
    p_build.add_argument("--midi-dir", required=True, help="directory searched recursively for .mid/.midi files")
    p_build.add_argument("--annotations", required=True, help="valence annotation CSV")
    p_build.add_argument("--out", required=True, help="dataset file to write")
    _add(p_build, "--seed", type=int, default=settings.seed, help="balancing seed (env MST_SEED)")
    _add(p_build, "--workers", type=int, default=settings.data_workers, help="parallel file conversions")
    p_build.set_defaults(func=cmd_build_dataset)

    p_train = sub.add_parser("train", help="Train the transfer model", formatter_class=fmt)
    p_train.add_argument("--dataset", required=True, help="dataset file from build-dataset")
    p_train.add_argument("--out-dir", required=True, help="directory for checkpoints and history")
    _add(p_train, "--epochs", type=int, default=defaults.epochs, help="maximum epochs")
    _add(p_train, "--batch-size", type=int, default=defaults.batch_size, help="phrases per batch and domain")
    _add(p_train, "--lambda-cycle", type=float, default=defaults.lambda_cycle, help="cycle-consistency weight")
    _add(p_train, "--gamma-mixed", type=float, default=defaults.gamma_mixed, help="mixed-pool discriminator weight")
    _add(p_train, "--lr", type=float, default=defaults.lr, help="Adam learning rate")
    _add(p_train, "--beta1", type=float, default=defaults.beta1, help="Adam beta1")
    _add(p_train, "--beta2", type=float, default=defaults.beta2, help="Adam beta2")
    _add(p_train, "--seed", type=int, default=settings.seed, help="initialisation and shuffle seed (env MST_SEED)")
    _add(p_train, "--checkpoint-every", type=int, default=defaults.checkpoint_every, help="epochs between checkpoints")
    _add(p_train, "--residual-blocks", type=int, default=defaults.residual_blocks, help="generator residual blocks")
    _add(p_train, "--base-filters", type=int, default=defaults.base_filters, help="filters of the first conv layer")
    _add(
        p_train,
        "--discriminator-noise",
        type=float,
        default=defaults.discriminator_noise,
        help="std of Gaussian noise on discriminator inputs",
    )
    p_train.add_argument("--resume", action="store_true", help="continue from OUT_DIR/latest.mstc")
    p_train.add_argument("--xlsx", action="store_true", help="also write history.xlsx")
    p_train.set_defaults(func=cmd_train)

    p_transfer = sub.add_parser("transfer", help="Transfer a MIDI file to the other sentiment", formatter_class=fmt)
    p_transfer.add_argument("--checkpoint", required=True, help="MSTC checkpoint")
    p_transfer.add_argument("--input", required=True, help="4/4 MIDI file")
    p_transfer.add_argument("--direction", required=True, choices=[d.value for d in Direction], help="a2b: negative to positive")
    p_transfer.add_argument("--out", required=True, help="MIDI file to write")
    p_transfer.add_argument("--cycle-out", default=None, help="also write the round-trip reconstruction here")
    p_transfer.set_defaults(func=cmd_transfer)

    p_validate = sub.add_parser("validate", help="Lint a MIDI file", formatter_class=fmt)
    p_validate.add_argument("path")
    p_validate.set_defaults(func=cmd_validate)

    p_round = sub.add_parser("roundtrip", help="Check midi -> phrases -> midi -> phrases is exact", formatter_class=fmt)
    p_round.add_argument("path")
    p_round.set_defaults(func=cmd_roundtrip)

    p_stats = sub.add_parser("stats", help="Print dataset statistics as JSON", formatter_class=fmt)
    p_stats.add_argument("dataset")
    p_stats.add_argument("--xlsx", default=None, help="also write the statistics workbook here")
    p_stats.set_defaults(func=cmd_stats)

    p_grad = sub.add_parser("gradcheck", help="Finite-difference check of every layer and loss", formatter_class=fmt)
    _add(p_grad, "--trials", type=int, default=20, help="random shapes per layer")
    _add(p_grad, "--tolerance", type=float, default=1e-3, help="maximum relative error")
    _add(p_grad, "--seed", type=int, default=settings.seed, help="shape and value seed (env MST_SEED)")
    p_grad.set_defaults(func=cmd_gradcheck)
    return parser


def _report(exc: MstError) -> None:
    parts = [f"error: {exc.code}: {exc.message}"]
    if exc.path:
        parts.append(f"file: {exc.path}")
    if exc.offset is not None:
        parts.append(f"offset: {exc.offset}")
    print("\n".join(parts), file=sys.stderr)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level, json_logs=args.json_logs)
    set_run_id(uuid.uuid4().hex[:12])
    func: Callable[[argparse.Namespace], int] = args.func
    try:
        return int(func(args))
    except InvariantViolation as exc:
        logger.error("invariant violated", extra={"code": exc.code, "path": exc.path, "command": args.cmd})
        _report(exc)
        return 2
    except MstError as exc:
        logger.debug("command failed", exc_info=True, extra={"code": exc.code, "command": args.cmd})
        _report(exc)
        return 1
    except ValidationError as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:
        logger.exception("unexpected failure", extra={"command": args.cmd})
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
