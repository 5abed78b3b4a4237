"""
Command-line surface for the fertility pipeline
Each subcommand loads the run config, delegates to the PipelineEngine and
turns the result dictionary into a process exit code
"""

import argparse
import json
import sys
from typing import Any, Callable, Dict, List, Optional

from config.config import RunConfig, configure_logging, load_run_config

from .services.errors import EggLabError
from .services.pipeline_engine import get_pipeline_engine

EXIT_OK = 0


def _emit(result: Dict[str, Any]) -> int:
    """Print a result and return its exit code"""
    if result["success"]:
        print(json.dumps(result, indent=2, default=str))
    else:
        print(f"error ({result['error_type']}): {result['error']}", file=sys.stderr)
    return int(result["exit_code"])


def _config(args: argparse.Namespace) -> RunConfig:
    return load_run_config(args.config, seed=args.seed, out_dir=args.out, offline=args.offline)


def cmd_prepare(args: argparse.Namespace) -> int:
    """Ingest, preprocess, split and fold; writes manifest.jsonl"""
    return _emit(get_pipeline_engine().prepare(_config(args)))


def cmd_synth(args: argparse.Namespace) -> int:
    return _emit(get_pipeline_engine().synth(_config(args)))


def cmd_augment_preview(args: argparse.Namespace) -> int:
    return _emit(get_pipeline_engine().augment_preview(_config(args), n=args.n, identity=args.identity))


def cmd_train(args: argparse.Namespace) -> int:
    return _emit(get_pipeline_engine().train(_config(args)))


def cmd_crossval(args: argparse.Namespace) -> int:
    return _emit(get_pipeline_engine().crossval(_config(args)))


def cmd_evaluate(args: argparse.Namespace) -> int:
    return _emit(get_pipeline_engine().evaluate(_config(args), checkpoint=args.checkpoint))


def cmd_report(args: argparse.Namespace) -> int:
    return _emit(get_pipeline_engine().report(_config(args)))


def cmd_tune(args: argparse.Namespace) -> int:
    return _emit(get_pipeline_engine().tune(_config(args)))


def cmd_ablate(args: argparse.Namespace) -> int:
    return _emit(get_pipeline_engine().ablate(_config(args)))


def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int, help="override every seed in the config")
    common.add_argument("--out", help="output directory (overrides out_dir)")
    common.add_argument("--offline", action="store_true", help="never download pretrained weights")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="egglab",
        description="Egg fertility classification from candling images",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    common = _common_flags()

    commands: List[tuple] = [
        ("prepare", cmd_prepare, "ingest, preprocess, split and fold the dataset"),
        ("synth", cmd_synth, "generate a synthetic candling dataset"),
        ("augment-preview", cmd_augment_preview, "render augmented variants as a contact sheet"),
        ("train", cmd_train, "train on the train split, validate on the test split"),
        ("crossval", cmd_crossval, "k-fold cross-validation over the train split"),
        ("evaluate", cmd_evaluate, "score a checkpoint and write metrics.json"),
        ("report", cmd_report, "write curves, table1 and cross-validation summaries"),
        ("tune", cmd_tune, "cross-validate every tune.grid point"),
        ("ablate", cmd_ablate, "cross-validate each augmentation technique alone"),
    ]
    for name, handler, help_text in commands:
        sub = subparsers.add_parser(name, parents=[common], help=help_text, description=help_text)
        sub.set_defaults(handler=handler)
        if name == "augment-preview":
            sub.add_argument("-n", type=int, default=9, help="number of augmented tiles (default 9)")
            sub.add_argument("--identity", action="store_true", help="use the identity policy")
        if name == "evaluate":
            sub.add_argument("--checkpoint", help="checkpoint to score (default runs/<backbone>/final)")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging()
    handler: Callable[[argparse.Namespace], int] = args.handler
    try:
        return handler(args)
    except EggLabError as e:
        print(f"error ({type(e).__name__}): {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
