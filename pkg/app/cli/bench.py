"""Subcomando `bench`: throughput y FLOPs del mezclador completo y comprimido."""
import argparse

from app.cli.common import add_common_arguments, load_run_config, output_dir
from app.core.errors import EXIT_NUMERIC, EXIT_OK
from app.core.logging import get_logger
from app.models.checkpoint import write_json
from app.schemas.report import BenchReport
from app.services.benchmark import run_bench

logger = get_logger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("bench", help="micro-benchmark de la recurrencia con d_k completo y podado")
    add_common_arguments(parser)
    parser.set_defaults(handler=cmd_bench)


def bench_table(report: BenchReport) -> str:
    lines = [f"{'d_k':>5} {'d_v':>5} {'FLOPs/token':>12} {'estado (B)':>11} {'tokens/s':>14} {'mediana (s)':>12}"]
    for row in (report.baseline, report.compressed):
        lines.append(
            f"{row.key_dim:>5} {row.value_dim:>5} {row.flops_per_token:>12} {row.state_bytes:>11} "
            f"{row.tokens_per_second:>14.1f} {row.median_seconds:>12.6f}"
        )
    lines.append(f"razón de FLOPs {report.flop_ratio:.4f}  memoria {report.memory_ratio:.4f}  aceleración de pared {report.speedup:.2f}x")
    return "\n".join(lines)


def cmd_bench(args: argparse.Namespace) -> int:
    config = load_run_config(args)
    out = output_dir(config)

    report = run_bench(
        config.key_dim, config.value_dim, config.ratio,
        variant=config.variant,
        tokens=config.bench_tokens,
        batch=config.bench_batch,
        num_heads=config.num_heads,
        seed=config.seed,
        warmup=config.bench_warmup,
        repeats=config.bench_repeats,
    )
    write_json(out / "bench.json", report.model_dump(by_alias=True, mode="json"))
    print(bench_table(report))

    if report.flop_ratio != report.expected_flop_ratio:
        logger.error("❌ Razón de FLOPs %.6f != modelo %.6f", report.flop_ratio, report.expected_flop_ratio)
        return EXIT_NUMERIC
    return EXIT_OK
