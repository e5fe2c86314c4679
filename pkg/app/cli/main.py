"""
Punto de entrada de la CLI.

Códigos de salida: 0 ok, 1 verificación fallida, 2 uso/configuración,
3 falla numérica.
"""
import argparse
import sys
from typing import List, Optional

from app.cli import bench, compare, prune, spectrum, train, verify
from app.core.config import settings
from app.core.errors import EXIT_NUMERIC, StatePruningError
from app.core.logging import configure_logging, get_logger

logger = get_logger(__name__)

COMMANDS = (train, prune, verify, bench, spectrum, compare)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="state-pruning", description=settings.DESCRIPTION)
    parser.add_argument("--log-level", default=settings.LOG_LEVEL)
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        command.register(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse termina con 2 ante flags inválidos y con 0 en --help
        return int(exc.code or 0)

    configure_logging(args.log_level)
    try:
        return args.handler(args)
    except StatePruningError as exc:
        logger.error("❌ %s", exc.message)
        for error in exc.errors:
            logger.error("   %s", error)
        print(f"error: {exc.message}", file=sys.stderr)
        return exc.exit_code
    except FloatingPointError as exc:
        logger.error("❌ Error de punto flotante: %s", exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
