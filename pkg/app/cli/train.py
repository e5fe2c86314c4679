"""Subcomando `train`: entrena el modelo de juguete y guarda checkpoint, métricas y el conjunto de evaluación."""
import argparse

from app.cli.common import add_common_arguments, load_run_config, output_dir
from app.core.errors import EXIT_OK
from app.core.logging import get_logger
from app.models.checkpoint import save_model, write_json, write_text
from app.services.tasks import EVAL_STREAM, eval_recall, gen_recall, init_toy_model, train_toy

logger = get_logger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("train", help="entrena el modelo de juguete en la tarea de recuerdo")
    add_common_arguments(parser)
    parser.add_argument("--steps", type=int, help="pasos de entrenamiento (sobrescribe trainSteps)")
    parser.set_defaults(handler=cmd_train)


def cmd_train(args: argparse.Namespace) -> int:
    config = load_run_config(args, trainSteps=args.steps)
    out = output_dir(config)
    task = config.task_spec()

    model = init_toy_model(config.vocab, config.head_dims(), config.num_layers, config.variant, seed=config.seed)
    result = train_toy(model, task, config.train_hyper())
    accuracy = eval_recall(result.model, task, config.eval_sequences)

    save_model(out / "checkpoint", result.model)
    # Mismas secuencias con las que se mide la precisión
    write_text(out / "dataset.jsonl", gen_recall(task, config.eval_sequences, stream=(EVAL_STREAM,)).to_jsonl())
    write_json(out / "metrics.json", {
        "steps": len(result.losses),
        "losses": result.losses,
        "finalLoss": result.losses[-1] if result.losses else None,
        "accuracy": accuracy,
        "config": config.model_dump(by_alias=True, mode="json", exclude={"output_dir"}),
    })
    logger.info("✅ Modelo entrenado: precisión %.3f", accuracy)
    return EXIT_OK
