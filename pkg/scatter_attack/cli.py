"""
Command-line interface.

Usage
-----
::

    python -m scatter_attack gen-data --out runs/demo
    python -m scatter_attack train --out runs/demo
    python -m scatter_attack attack --out runs/demo --kind otsa --image synth-0003
    python -m scatter_attack compare --out runs/demo --image synth-0003
    python -m scatter_attack campaign --out runs/demo --jobs 4
    python -m scatter_attack render --params 1,44,44,0,0,0,0
    python -m scatter_attack report --out runs/demo

Exit codes: 0 success, 2 usage or configuration error, 3 IO error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .ascm import NUM_PARAMS, ScattererParams, ScattererSet, render_image
from .attack import ATTACK_KINDS, KIND_FGSM, KIND_OTSA, fgsm, run_baseline, run_otsa, save_result
from .classifier import ConvClassifier, ModelSpec, evaluate_accuracy, load_weights, save_weights, train
from .config import RunConfig, component_seed, load_run_config
from .dataio import LabeledSample, generate_synthetic_dataset, prepare_split, read_dataset, save_image, write_dataset
from .errors import (
    ConfigError,
    FormatError,
    InitError,
    NumericalError,
    ParameterError,
    UndefinedRateError,
)
from .evaluation import run_campaign
from .report_generator import emit_report, load_report, write_panel


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4

DATA_DIR = "data"
MODEL_FILE = "model.otsaw"
REPORT_DIR = "report"
ATTACK_DIR = "attacks"


# ------------------------------------------------------------------
# Helpers
# ------------------------------------------------------------------


def _out(config: RunConfig) -> Path:
    return Path(config.output_dir)


def _manifest_path(args: argparse.Namespace, config: RunConfig) -> Path:
    return Path(args.data) if args.data else _out(config) / DATA_DIR / "manifest.json"


def _model_path(args: argparse.Namespace, config: RunConfig) -> Path:
    return Path(args.model) if args.model else _out(config) / MODEL_FILE


def _read_input(loader: Callable, path: Path):
    """Run *loader* on an input file; a missing file is a usage error."""
    if not path.exists():
        raise ConfigError(f"missing input file: {path}")
    return loader(path)


def _split(config: RunConfig, samples: Sequence[LabeledSample]):
    return prepare_split(
        samples,
        test_fraction=config.train.test_fraction,
        seed=component_seed(config.seed, "split"),
    )


def _load_model(args: argparse.Namespace, config: RunConfig) -> ConvClassifier:
    return ConvClassifier(_read_input(load_weights, _model_path(args, config)))


def _check_finite(array: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(array)):
        raise NumericalError(f"{what} contains NaN or Inf")


def parse_params(text: str) -> ScattererParams:
    """``"A,x,y[,gamma,L,alpha,phi_bar]"``; omitted trailing parameters are 0."""
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise ConfigError(f"--params {text!r}: {exc}") from exc
    if not 3 <= len(values) <= NUM_PARAMS:
        raise ConfigError(f"--params {text!r}: expected 3 to {NUM_PARAMS} comma-separated values")
    values += [0.0] * (NUM_PARAMS - len(values))
    return ScattererParams.from_array(values)


# ------------------------------------------------------------------
# Commands
# ------------------------------------------------------------------


def cmd_gen_data(args: argparse.Namespace, config: RunConfig) -> int:
    samples = generate_synthetic_dataset(config.synth_config())
    manifest = write_dataset(samples, _out(config) / DATA_DIR)
    print(f"Wrote {len(samples)} samples to {manifest}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace, config: RunConfig) -> int:
    samples = _read_input(read_dataset, _manifest_path(args, config))
    train_set, test_set = _split(config, samples)
    if not train_set:
        raise ConfigError("the training split is empty")
    spec = ModelSpec(num_classes=config.synth.num_classes)
    weights = train(
        np.stack([s.image for s in train_set]),
        [s.label for s in train_set],
        spec,
        config.train_config(),
    )
    for layer in weights.layers():
        _check_finite(layer, "trained weights")
    path = _model_path(args, config)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_weights(weights, path)
    model = ConvClassifier(weights)
    if test_set:
        accuracy = evaluate_accuracy(model, [s.image for s in test_set], [s.label for s in test_set])
        print(f"Test accuracy: {accuracy:.3f} ({len(test_set)} images)")
    print(f"Saved weights to {path}")
    return EXIT_OK


def _find_sample(samples: Sequence[LabeledSample], sample_id: str) -> LabeledSample:
    for sample in samples:
        if sample.id == sample_id:
            return sample
    raise ConfigError(f"no sample with id {sample_id!r}")


def cmd_attack(args: argparse.Namespace, config: RunConfig) -> int:
    if not args.image:
        raise ConfigError("attack needs --image <sample id>")
    samples = _read_input(read_dataset, _manifest_path(args, config))
    train_set, test_set = _split(config, samples)
    sample = _find_sample(list(test_set) + list(train_set), args.image)
    model = _load_model(args, config)
    directory = _out(config) / ATTACK_DIR
    stem = f"{sample.id}-{args.kind}"

    if args.kind == KIND_FGSM:
        epsilon = config.campaign.fgsm_epsilon if args.epsilon is None else args.epsilon
        adversarial = fgsm(sample.image, sample.label, model, epsilon)
        _check_finite(adversarial, "perturbed image")
        prediction = model.predict(adversarial)
        directory.mkdir(parents=True, exist_ok=True)
        save_image(adversarial, directory / f"{stem}.pgm")
        summary = {
            "kind": KIND_FGSM,
            "label": sample.label,
            "epsilon": epsilon,
            "predicted_label": prediction.label,
            "success": prediction.label != sample.label,
            "probabilities": [float(p) for p in prediction.probabilities],
        }
        path = directory / f"{stem}.json"
        path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        success = summary["success"]
    else:
        runner = run_otsa if args.kind == KIND_OTSA else run_baseline
        result = runner(
            sample.image, sample.label, sample.mask, model, config.attack_config(), config.imaging_params()
        )
        _check_finite(result.adversarial, "perturbed image")
        path = save_result(result, directory, stem)
        success = result.success
    print(f"{args.kind} on {sample.id}: {'success' if success else 'failure'}")
    print(f"Wrote {path}")
    return EXIT_OK


def cmd_compare(args: argparse.Namespace, config: RunConfig) -> int:
    if not args.image:
        raise ConfigError("compare needs --image <sample id>")
    samples = _read_input(read_dataset, _manifest_path(args, config))
    train_set, test_set = _split(config, samples)
    sample = _find_sample(list(test_set) + list(train_set), args.image)
    model = _load_model(args, config)
    attack_config, xi = config.attack_config(), config.imaging_params()
    directory = _out(config) / ATTACK_DIR

    results = []
    for runner in (run_otsa, run_baseline):
        result = runner(sample.image, sample.label, sample.mask, model, attack_config, xi)
        _check_finite(result.adversarial, "perturbed image")
        save_result(result, directory, f"{sample.id}-{result.kind}")
        print(
            f"{result.kind} on {sample.id}: {'success' if result.success else 'failure'}, "
            f"{sum(result.on_target)}/{len(result.on_target)} scatterers on target"
        )
        results.append(result)
    path = write_panel(
        sample.image, sample.mask, results[0], results[1], directory / f"{sample.id}-compare.svg"
    )
    print(f"Wrote {path}")
    return EXIT_OK


def cmd_campaign(args: argparse.Namespace, config: RunConfig) -> int:
    samples = _read_input(read_dataset, _manifest_path(args, config))
    _, test_set = _split(config, samples)
    model = _load_model(args, config)
    report = run_campaign(
        test_set,
        model,
        config.campaign_config(),
        config.attack_config(),
        config.imaging_params(),
        jobs=config.jobs,
    )
    paths = emit_report(report, _out(config) / REPORT_DIR)
    if report.empty:
        print("Campaign is empty: no sample was classified correctly before the attack.")
    for label, rate in report.rates.items():
        print(f"{label}: success rate {rate:.3f}")
    print(f"Wrote {paths.csv}, {paths.json}, {paths.svg}")
    return EXIT_OK


def cmd_render(args: argparse.Namespace, config: RunConfig) -> int:
    if not args.params:
        raise ConfigError("render needs at least one --params A,x,y,gamma,L,alpha,phi_bar")
    thetas = ScattererSet(tuple(parse_params(p) for p in args.params))
    image = render_image(thetas, config.imaging_params())
    _check_finite(image, "rendered image")
    out = _out(config)
    out.mkdir(parents=True, exist_ok=True)
    path = save_image(image, out / "scatterers.pgm")
    peak = np.unravel_index(int(np.argmax(image)), image.shape)
    print(f"Peak {image.max():.6f} at ({peak[0]}, {peak[1]})")
    print(f"Wrote {path}")
    return EXIT_OK


def cmd_report(args: argparse.Namespace, config: RunConfig) -> int:
    summary = Path(args.summary) if args.summary else _out(config) / REPORT_DIR / "summary.json"
    report = _read_input(load_report, summary)
    paths = emit_report(report, _out(config) / REPORT_DIR)
    print(f"Wrote {paths.csv}, {paths.json}, {paths.svg}")
    return EXIT_OK


COMMANDS: Dict[str, Callable[[argparse.Namespace, RunConfig], int]] = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "attack": cmd_attack,
    "compare": cmd_compare,
    "campaign": cmd_campaign,
    "render": cmd_render,
    "report": cmd_report,
}


# ------------------------------------------------------------------
# Entry point
# ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scatter_attack",
        description="On-target scatterer attacks against SAR image classifiers.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value configuration file")
    common.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key"
    )
    common.add_argument("--seed", type=int, help="root seed (overrides config and OTSA_SEED)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--jobs", type=int, help="parallel attack workers")
    common.add_argument(
        "--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"]
    )
    common.add_argument("--data", help="dataset manifest (default <out>/data/manifest.json)")
    common.add_argument("--model", help="weights file (default <out>/model.otsaw)")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="write a synthetic dataset")
    sub.add_parser("train", parents=[common], help="train the classifier")
    attack = sub.add_parser("attack", parents=[common], help="attack one image")
    attack.add_argument("--kind", choices=ATTACK_KINDS, default=KIND_OTSA)
    attack.add_argument("--image", help="sample id")
    attack.add_argument("--epsilon", type=float, help="FGSM step (default campaign.fgsm_epsilon)")
    compare = sub.add_parser("compare", parents=[common], help="OTSA and baseline on one image, with a panel")
    compare.add_argument("--image", help="sample id")
    sub.add_parser("campaign", parents=[common], help="run the attack campaign")
    render = sub.add_parser("render", parents=[common], help="render scatterers alone")
    render.add_argument("--params", action="append", default=[], metavar="A,x,y,...")
    report = sub.add_parser("report", parents=[common], help="re-emit report files")
    report.add_argument("--summary", help="summary.json to re-emit")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        overrides = list(args.set)
        if args.jobs is not None:
            overrides.append(f"jobs={args.jobs}")
        config = load_run_config(args.config, overrides, seed=args.seed, output_dir=args.out)
        return COMMANDS[args.command](args, config)
    except (ConfigError, ParameterError, FormatError, InitError, UndefinedRateError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as e:
        print(f"Error: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
