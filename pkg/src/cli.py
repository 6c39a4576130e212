"""Command-line entry point.

Verbs: synth, build, train, generate, evaluate, ablate. Every verb that writes
artifacts also writes a manifest.json (resolved configuration and a git-style
hash of its inputs) next to them.

Exit codes: 0 success, 2 usage error, 3 data/config/checkpoint error,
4 numerical failure (non-finite loss).

Numerical modules are imported inside the handlers so ``--threads`` can pin
the BLAS thread pools before numpy loads.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from utils import Configuration, configure_logging, limit_threads, write_manifest

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class OutputExistsError(Exception):
    pass


def prepare_out_dir(path: Path, force: bool) -> Path:
    """
    Create the output directory, refusing a non-empty one unless `force` is set.

    Raises:
        OutputExistsError: If `path` exists, is non-empty and `force` is False.
        NotADirectoryError: If `path` is an existing file.
    """
    path = Path(path)
    if path.is_file():
        raise NotADirectoryError(f"output path {path} is a file")
    if path.is_dir() and any(path.iterdir()) and not force:
        raise OutputExistsError(f"output directory {path} is not empty (use --force)")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _stage_config(args):
    from pipeline import StageConfig

    config = StageConfig.from_file(args.config) if args.config else StageConfig()
    overrides = list(args.overrides)
    if getattr(args, "stage", None) is not None:
        overrides.append(f"stage.stage={args.stage}")
    if args.seed is not None:
        overrides.append(f"stage.seed={args.seed}")
    if getattr(args, "dataset_dir", None) is not None:
        overrides.append(f"stage.dataset_dir={args.dataset_dir}")
    return config.apply_overrides(overrides)


def _generation_config(args):
    from transformer import GenerationConfig

    return GenerationConfig(
        max_len=args.max_len,
        strategy=args.strategy,
        beam_size=args.beam_size,
        length_penalty=args.length_penalty,
    )


def cmd_synth(args) -> int:
    import synthetic

    out_dir = prepare_out_dir(args.out, args.force)
    corpus = synthetic.generate_synthetic_corpus(
        seed=args.seed or 0,
        n_patients=args.patients,
        visits_range=(args.min_visits, args.max_visits),
        image_size=args.image_size,
    )
    synthetic.write_corpus(corpus, out_dir)
    config = {
        "seed": args.seed or 0,
        "patients": args.patients,
        "visits": [args.min_visits, args.max_visits],
        "image_size": args.image_size,
    }
    write_manifest(out_dir, "synth", config, [])
    return EXIT_OK


def cmd_build(args) -> int:
    import data

    out_dir = prepare_out_dir(args.out, args.force)
    summary = data.build_datasets(args.corpus, out_dir, args.vocab_size, args.max_len)
    config = {"vocab_size": args.vocab_size, "max_len": args.max_len}
    inputs = [Path(args.corpus) / name for name in (
        Configuration.STUDIES_FILE,
        Configuration.REPORTS_FILE,
        Configuration.QA_FILE,
    )]
    write_manifest(out_dir, "build", config, inputs)
    logger.info("build counts=%s", summary.counts)
    return EXIT_OK


def cmd_train(args) -> int:
    from checkpoint import load_checkpoint
    from pipeline import run_stage

    config = _stage_config(args)
    init = load_checkpoint(args.init) if args.init else None
    out = args.out or Configuration.MODELS_PATH / f"stage{config.stage}"
    out_dir = prepare_out_dir(out, args.force)
    run_stage(config, init, out_dir)
    inputs = [Path(config.dataset_dir)] + ([Path(args.init)] if args.init else [])
    write_manifest(out_dir, "train", config.to_dict(), inputs)
    return EXIT_OK


def _load_for_generation(args):
    import data
    import evaluation
    import tensor as T
    import tokenizer
    from checkpoint import load_checkpoint

    model = load_checkpoint(args.checkpoint).build_model()
    samples = data.load_samples(args.dataset)
    if not samples:
        raise data.DataValidationError(f"{args.dataset} holds no samples")
    vocab_path = args.vocab or Path(args.dataset).parent / Configuration.VOCAB_FILE
    vocab = tokenizer.load_vocab(vocab_path)
    images = data.ImageCache(model.config.in_channels, T.get_default_dtype())
    evaluation.check_compatible(model, vocab, images, samples[0])
    return model, samples, vocab, images


def cmd_generate(args) -> int:
    import evaluation

    model, samples, vocab, images = _load_for_generation(args)
    out_dir = prepare_out_dir(args.out, args.force)
    rows = evaluation.generate_predictions(
        model, samples, vocab, images, _generation_config(args), args.batch_size
    )
    evaluation.write_predictions(rows, out_dir / Configuration.PREDICTIONS_FILE)
    write_manifest(
        out_dir, "generate", vars_for_manifest(args), [args.checkpoint, args.dataset]
    )
    return EXIT_OK


def cmd_evaluate(args) -> int:
    import evaluation

    model, samples, vocab, images = _load_for_generation(args)
    non_test = sum(s.split != "test" for s in samples)
    if non_test:
        logger.warning("evaluating on %d samples outside the test split", non_test)
    out_dir = prepare_out_dir(args.out, args.force)
    if args.predictions:
        predictions = evaluation.read_predictions(args.predictions)
    else:
        rows = evaluation.generate_predictions(
            model, samples, vocab, images, _generation_config(args), args.batch_size
        )
        evaluation.write_predictions(rows, out_dir / Configuration.PREDICTIONS_FILE)
        predictions = {r["sample_id"]: r["prediction"] for r in rows}
    evaluation.evaluate(predictions, samples, out_dir)
    if args.swap_analysis:
        report = evaluation.swap_sensitivity(
            model, samples, vocab, images, _generation_config(args), args.batch_size
        )
        (out_dir / "swap_analysis.json").write_text(report.to_json() + "\n", encoding="utf-8")
    inputs = [args.checkpoint, args.dataset] + ([args.predictions] if args.predictions else [])
    write_manifest(out_dir, "evaluate", vars_for_manifest(args), inputs)
    return EXIT_OK


def cmd_ablate(args) -> int:
    import ablation

    config = _stage_config(args)
    out_dir = prepare_out_dir(args.out, args.force)
    ablation.run_ablation(args.table, config, args.seeds, out_dir)
    manifest = {"table": args.table, "seeds": list(args.seeds), "base": config.to_dict()}
    write_manifest(out_dir, "ablate", manifest, [Path(config.dataset_dir)])
    return EXIT_OK


def vars_for_manifest(args) -> dict:
    skip = {"handler"}
    return {
        k: (str(v) if isinstance(v, Path) else v)
        for k, v in sorted(vars(args).items())
        if k not in skip
    }


def _add_generation_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--checkpoint", type=Path, required=True, help="Checkpoint file.")
    parser.add_argument("--dataset", type=Path, required=True, help="Sample JSONL file.")
    parser.add_argument("--vocab", type=Path, help="Vocabulary (default: next to the dataset).")
    parser.add_argument("--out", type=Path, required=True, help="Output directory.")
    parser.add_argument("--strategy", choices=("greedy", "beam"), default="greedy")
    parser.add_argument("--beam-size", type=int, default=1)
    parser.add_argument("--length-penalty", type=float, default=1.0)
    parser.add_argument("--max-len", type=int, default=Configuration.MAX_SEQUENCE_LENGTH)
    parser.add_argument("--batch-size", type=int, default=16)


def _add_config_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="Config file with [stage]/[model] sections.")
    parser.add_argument("--dataset-dir", type=Path, help="Directory written by `build`.")
    parser.add_argument(
        "overrides",
        nargs="*",
        metavar="KEY=VALUE",
        help="Dotted overrides such as stage.max_steps=200 or model.d_model=32.",
    )


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="Random seed.")
    common.add_argument(
        "--threads", type=int, help="BLAS/OpenMP threads (1 for determinism)."
    )
    common.add_argument("--precision", type=int, choices=(32, 64), default=32)
    common.add_argument("--log-level", default="INFO")
    common.add_argument(
        "--force", action="store_true", help="Write into a non-empty output directory."
    )

    parser = argparse.ArgumentParser(
        prog="priorview",
        description="Longitudinal chest X-ray difference VQA: data, training and evaluation.",
    )
    verbs = parser.add_subparsers(dest="verb", required=True)

    synth = verbs.add_parser("synth", parents=[common], help="Generate a synthetic corpus.")
    synth.add_argument("--patients", type=int, default=50)
    synth.add_argument("--min-visits", type=int, default=1)
    synth.add_argument("--max-visits", type=int, default=4)
    synth.add_argument("--image-size", type=int, default=64)
    synth.add_argument("--out", type=Path, required=True)
    synth.set_defaults(handler=cmd_synth)

    build = verbs.add_parser("build", parents=[common], help="Build datasets and the vocabulary.")
    build.add_argument("--corpus", type=Path, required=True)
    build.add_argument("--out", type=Path, required=True)
    build.add_argument("--vocab-size", type=int, default=Configuration.DEFAULT_VOCAB_SIZE)
    build.add_argument("--max-len", type=int, default=Configuration.MAX_SEQUENCE_LENGTH)
    build.set_defaults(handler=cmd_build)

    train = verbs.add_parser("train", parents=[common], help="Train one stage.")
    _add_config_options(train)
    train.add_argument("--stage", type=int, choices=(1, 2, 3))
    train.add_argument("--init", type=Path, help="Checkpoint to start from.")
    train.add_argument("--out", type=Path, help="Output directory (default models/stage<N>).")
    train.set_defaults(handler=cmd_train)

    generate = verbs.add_parser("generate", parents=[common], help="Generate answers.")
    _add_generation_options(generate)
    generate.set_defaults(handler=cmd_generate)

    evaluate = verbs.add_parser("evaluate", parents=[common], help="Score a checkpoint.")
    _add_generation_options(evaluate)
    evaluate.add_argument("--predictions", type=Path, help="Score existing predictions.")
    evaluate.add_argument("--swap-analysis", action="store_true")
    evaluate.set_defaults(handler=cmd_evaluate)

    ablate = verbs.add_parser("ablate", parents=[common], help="Run an ablation table.")
    _add_config_options(ablate)
    ablate.add_argument("--table", type=int, choices=(2, 3, 4), required=True)
    ablate.add_argument("--seeds", type=int, nargs="+", default=[0])
    ablate.add_argument("--out", type=Path, required=True)
    ablate.set_defaults(handler=cmd_ablate)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    limit_threads(args.threads)
    configure_logging(args.log_level)

    import numpy as np

    import tensor as T
    from checkpoint import CheckpointError
    from data import DataValidationError
    from model import ParameterMismatchError
    from pipeline import ConfigError, NumericalError

    T.set_default_dtype(np.float64 if args.precision == 64 else np.float32)
    try:
        return args.handler(args)
    except NumericalError as err:
        logger.error("numerical failure: %s", err)
        return EXIT_NUMERIC
    except (
        DataValidationError,
        CheckpointError,
        ParameterMismatchError,
        ConfigError,
        OutputExistsError,
        T.ContractError,
        T.DimensionError,
        OSError,
    ) as err:
        logger.error("%s", err)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
