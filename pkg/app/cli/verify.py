"""Subcomando `verify`: corre las verificaciones empíricas de las cotas teóricas."""
import argparse

from app.cli.common import add_common_arguments, load_run_config, output_dir
from app.core.errors import EXIT_OK, EXIT_VERIFICATION_FAILED
from app.core.logging import get_logger
from app.models.checkpoint import write_json
from app.services.theory_verify import CHECKS, run_all

logger = get_logger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("verify", help="verifica empíricamente las cotas y propiedades")
    add_common_arguments(parser)
    parser.add_argument("--checks", nargs="+", choices=sorted(CHECKS), help="subconjunto de verificaciones")
    parser.add_argument("--trials", type=int, help="presupuesto de ensayos por verificación")
    parser.set_defaults(handler=cmd_verify)


def cmd_verify(args: argparse.Namespace) -> int:
    config = load_run_config(args, checks=args.checks, verifyTrials=args.trials)
    out = output_dir(config)

    report = run_all(seed=config.seed, names=config.checks, trials=config.verify_trials)
    write_json(out / "verify_report.json", report.model_dump(by_alias=True, mode="json"))
    print(report.summary())

    if not report.passed:
        failed = [check.name for check in report.checks if not check.passed]
        logger.error("❌ Verificaciones fallidas: %s", ", ".join(failed))
        return EXIT_VERIFICATION_FAILED
    logger.info("✅ %d verificaciones superadas", len(report.checks))
    return EXIT_OK
