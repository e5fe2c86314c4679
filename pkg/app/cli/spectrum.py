"""Subcomando `spectrum`: valores singulares y utilización del estado por token (CSV)."""
import argparse

from app.cli.common import add_checkpoint_argument, add_common_arguments, load_checkpoint, load_run_config, output_dir
from app.core.errors import EXIT_OK
from app.core.logging import get_logger
from app.models.checkpoint import write_csv, write_json
from app.services.rank_diagnostics import spectrum_rows, utilization_rows
from app.services.tasks import EVAL_STREAM, gen_recall, model_spectra

logger = get_logger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("spectrum", help="exporta espectros del estado por token a CSV")
    add_common_arguments(parser)
    add_checkpoint_argument(parser)
    parser.add_argument("--skip", type=int, help="tokens iniciales omitidos")
    parser.set_defaults(handler=cmd_spectrum)


def cmd_spectrum(args: argparse.Namespace) -> int:
    config = load_run_config(args, skip=args.skip)
    out = output_dir(config)
    model = load_checkpoint(args, config)

    tokens = gen_recall(config.task_spec(), 1, stream=(EVAL_STREAM,)).tokens[0]
    reports = []
    for index, result in enumerate(model_spectra(model, tokens, config.skip)):
        write_csv(out / f"spectrum_layer{index}.csv", ["head", "token", "sigma_index", "sigma_value"], spectrum_rows(result))
        write_csv(out / f"utilization_layer{index}.csv", ["head", "token", "utilization"], utilization_rows(result))
        reports.append(result.report.model_dump(by_alias=True, mode="json"))
    write_json(out / "rank_report.json", {"layers": reports})
    logger.info("✅ Espectros de %d capas escritos en %s", len(reports), out)
    return EXIT_OK
