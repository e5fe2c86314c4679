"""Subcomando `compare`: DRRQR contra una estrategia de referencia sobre varias semillas."""
import argparse

from app.cli.common import add_checkpoint_argument, add_common_arguments, load_checkpoint, load_run_config, output_dir
from app.constants.pruning import ESTRATEGIAS_PERMITIDAS
from app.core.errors import EXIT_OK, EXIT_VERIFICATION_FAILED
from app.core.logging import get_logger
from app.models.checkpoint import write_json
from app.schemas.plan import Strategy
from app.services.tasks import compare_pruners

logger = get_logger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("compare", help="compara dos podadores con una prueba de signos")
    add_common_arguments(parser)
    add_checkpoint_argument(parser)
    parser.add_argument("--reference", choices=ESTRATEGIAS_PERMITIDAS, default=Strategy.RAND.value)
    parser.add_argument("--seeds", type=int, nargs="+", help="semillas de poda")
    parser.add_argument("--rft", action="store_true", help="mide también la precisión tras RFT")
    parser.set_defaults(handler=cmd_compare)


def cmd_compare(args: argparse.Namespace) -> int:
    config = load_run_config(args, seeds=args.seeds)
    out = output_dir(config)
    model = load_checkpoint(args, config)

    report = compare_pruners(
        model, config.task_spec(),
        ratio=config.ratio,
        seeds=config.seeds,
        mode=config.mode,
        challenger=config.strategy,
        reference=args.reference,
        rft_steps=config.rft_steps if args.rft else 0,
        eval_count=config.eval_sequences,
        rft_lr=config.rft_lr,
    )
    write_json(out / "compare.json", report.model_dump(by_alias=True, mode="json"))
    for name, mean in report.means.items():
        print(f"{name:<18} {mean:.4f}")
    print(f"victorias {report.wins}  derrotas {report.losses}  empates {report.ties}  p={report.p_value:.4f}")
    if not report.passed:
        logger.error(
            "❌ %s queda por debajo de %s: %.4f < %.4f",
            report.challenger, report.reference,
            report.means[report.challenger], report.means[report.reference],
        )
        return EXIT_VERIFICATION_FAILED
    return EXIT_OK
