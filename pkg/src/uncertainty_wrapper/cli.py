"""Command line interface for the uncertainty wrapper pipeline."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .analysis.aggregation import coverage_summary, dataset_bounds, write_bounds_csv
from .analysis.evaluation import evaluation_table, format_table, write_evaluation
from .analysis.plotting import factor_scatter_svg, gating_svg, population_bounds_svg
from .config import RunConfig, load_run_config, write_demo_config
from .core.data_model import Dataset, Panel, Sample, load_events_csv, write_events_csv
from .core.ddm import DdmModel, accuracy, load_ddm, predict_sample, save_ddm, train_ddm
from .core.synthgen import generate_dataset, relabel_with_gates
from .errors import EXIT_CONFIG, EXIT_IO, EXIT_OK, InputError, UncertaintyWrapperError
from .quality.quality_factors import VariantConfig, assemble_factors
from .quality.wrapper import (
    UncertaintyWrapper,
    build_wrapper,
    load_wrapper,
    load_wrapper_dir,
    save_wrapper,
    wrapper_estimate,
    wrapper_file_name,
)
from .utils import atomic_write_text, to_serializable, write_json

logger = logging.getLogger(__name__)

PROG = "uwrap"
SPLIT_FILES = {"train": "train.csv", "calibration": "calibration.csv", "test": "test.csv"}
PANEL_FILE = "panel.json"
DUMP_VARIANTS = ("percentile", "combined")


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with the configuration exit code."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _print_json(data: Any) -> None:
    print(json.dumps(to_serializable(data), indent=2, ensure_ascii=False))


def _configure_logging(verbose: bool, quiet: bool) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(
        level=level,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        stream=sys.stderr,
    )
    logging.getLogger().setLevel(level)


def _marker_pair(text: str) -> Tuple[int, int]:
    try:
        i, j = (int(part) for part in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected two marker indices 'i,j', got {text!r}") from None
    return i, j


# ---------------------------------------------------------------------------
# Shared loading helpers
# ---------------------------------------------------------------------------


def _split_path(config: RunConfig, split: str) -> Path:
    return config.paths.data / SPLIT_FILES[split]


def _load_split(config: RunConfig, split: str) -> List[Sample]:
    path = _split_path(config, split)
    if not path.exists():
        raise FileNotFoundError(f"Missing {split} events: {path} (run 'uwrap generate' first)")
    return list(load_events_csv(path, config.panel).samples)


def _find_sample(config: RunConfig, sample_id: str) -> Sample:
    searched = False
    for split in ("test", "calibration", "train"):
        path = _split_path(config, split)
        if not path.exists():
            continue
        searched = True
        for sample in load_events_csv(path, config.panel).samples:
            if sample.sample_id == sample_id:
                return sample
    if not searched:
        raise FileNotFoundError(f"No events files under {config.paths.data}")
    raise InputError(f"Unknown sample: {sample_id}")


def _ddm_path(config: RunConfig, cell_type: str) -> Path:
    return config.paths.ddm_dir / f"{cell_type}.json"


def _load_ddm(config: RunConfig, cell_type: str) -> DdmModel:
    path = _ddm_path(config, cell_type)
    if not path.exists():
        raise FileNotFoundError(f"Missing DDM for {cell_type}: {path} (run 'uwrap train' first)")
    return load_ddm(path)


def _load_named_wrapper(config: RunConfig, cell_type: str, variant: str) -> UncertaintyWrapper:
    path = config.paths.wrapper_dir / wrapper_file_name(cell_type, variant)
    if not path.exists():
        raise FileNotFoundError(f"Missing wrapper {path} (run 'uwrap build' first)")
    return load_wrapper(path)


def _ground_truth_basis(sample: Sample, panel: Panel, cell_type: str) -> Sample:
    parent = panel.cell_type(cell_type).parent
    return sample if parent is None else sample.subset(sample.label(parent))


def _runtime_basis(config: RunConfig, sample: Sample, cell_type: str) -> Sample:
    """Events a cell type's classifier sees at runtime: its parent's predicted positives."""
    parent = config.panel.cell_type(cell_type).parent
    if parent is None:
        return sample
    parent_sample = _runtime_basis(config, sample, parent)
    return parent_sample.subset(predict_sample(_load_ddm(config, parent), parent_sample))


def _check_pair(pair: Tuple[int, int], panel: Panel) -> Tuple[int, int]:
    if any(index < 0 or index >= panel.n_markers for index in pair) or pair[0] == pair[1]:
        raise InputError(f"Marker pair {pair[0]},{pair[1]} is not valid for a {panel.n_markers}-marker panel")
    return pair


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_init_config(args: argparse.Namespace) -> Dict[str, Any]:
    path = write_demo_config(args.path)
    return {"config": str(path)}


def cmd_generate(config: RunConfig, args: argparse.Namespace) -> Dict[str, Any]:
    generator = config.generator
    if args.shift_sd is not None:
        generator = replace(generator, sample_shift_sd=float(args.shift_sd))
    dataset = generate_dataset(generator, config.split_counts, config.seed, max_workers=config.max_workers)
    if config.label_source == "gates":
        samples = tuple(relabel_with_gates(s, config.gates, generator.transform) for s in dataset.samples)
        dataset = Dataset(panel=dataset.panel, samples=samples, split=dataset.split)

    counts = dataset.split_counts()
    files = {}
    for split, file_name in SPLIT_FILES.items():
        path = write_events_csv(config.paths.data / file_name, dataset.select_split(split))
        files[split] = str(path)
        logger.info("%s: %s samples, %s events", split, counts[split]["samples"], counts[split]["events"])
    manifest = {
        "seed": config.seed,
        "split_counts": list(config.split_counts),
        "label_source": config.label_source,
        "generator": generator.to_dict(),
        "counts": counts,
    }
    write_json(config.paths.data / "manifest.json", manifest)
    return {"seed": config.seed, "counts": counts, "files": files}


def cmd_train(config: RunConfig, args: argparse.Namespace) -> Dict[str, Any]:
    train = _load_split(config, "train")
    calib = _load_split(config, "calibration")
    params = config.ddm_params()
    metrics: Dict[str, Any] = {}
    for spec in config.panel.ordered_cell_types():
        name = spec.name
        ddm = train_ddm([_ground_truth_basis(s, config.panel, name) for s in train], name, params)
        save_ddm(_ddm_path(config, name), ddm)
        calib_accuracy = accuracy(ddm, [_ground_truth_basis(s, config.panel, name) for s in calib])
        logger.info("%s: calibration accuracy %.4f", name, calib_accuracy)
        metrics[name] = {
            "train_accuracy": ddm.training.get("train_accuracy"),
            "calibration_accuracy": calib_accuracy,
            "train_events": ddm.training.get("n_events"),
        }
    write_json(config.paths.models / PANEL_FILE, config.panel.to_dict())
    summary = {"seed": config.seed, "ddm": params.to_dict(), "cell_types": metrics}
    write_json(config.paths.models / "metrics.json", summary)
    return summary


def cmd_build(config: RunConfig, args: argparse.Namespace) -> Dict[str, Any]:
    train = _load_split(config, "train")
    calib = _load_split(config, "calibration")
    built: Dict[str, List[UncertaintyWrapper]] = {}
    written: List[str] = []
    for spec in config.panel.ordered_cell_types():
        name = spec.name
        ddm_path = _ddm_path(config, name)
        ddm = _load_ddm(config, name)
        parent_wrappers = built.get(spec.parent) if spec.parent else None
        for variant in config.variants[name]:
            wrapper = build_wrapper(
                variant,
                ddm,
                train,
                calib,
                config.panel,
                name,
                confidence=config.confidence,
                min_leaf_calib=config.min_leaf_for(name),
                tree_params=config.tree,
                parent_wrapper=parent_wrappers[0] if parent_wrappers else None,
                subtype_basis=config.subtype_basis,
                scope_tolerance=config.scope_tolerance,
                max_workers=config.max_workers,
            )
            path = save_wrapper(config.paths.wrapper_dir / wrapper_file_name(name, variant.name), wrapper, ddm_path)
            built.setdefault(name, []).append(wrapper)
            written.append(str(path))
    return {"wrappers": written, "leaves": {w.name: w.impact_model.n_leaves for ws in built.values() for w in ws}}


def _ordered_wrappers(config: RunConfig, wrappers: Sequence[UncertaintyWrapper]) -> List[UncertaintyWrapper]:
    def rank(wrapper: UncertaintyWrapper) -> Tuple[int, str]:
        names = [v.name for v in config.variants.get(wrapper.cell_type.name, [])]
        position = names.index(wrapper.variant.name) if wrapper.variant.name in names else len(names)
        return position, wrapper.variant.name

    return sorted(wrappers, key=rank)


def cmd_evaluate(config: RunConfig, args: argparse.Namespace) -> Dict[str, Any]:
    wrappers = _ordered_wrappers(config, load_wrapper_dir(config.paths.wrapper_dir))
    test = _load_split(config, "test")
    rows = evaluation_table(wrappers, test, config.panel, max_workers=config.max_workers)
    csv_path = config.paths.outputs / "evaluation.csv"
    text_path = config.paths.outputs / "evaluation.txt"
    write_evaluation(rows, csv_path, text_path)
    print(format_table(rows), end="")
    return {"rows": len(rows), "csv": str(csv_path), "table": str(text_path)}


def cmd_aggregate(config: RunConfig, args: argparse.Namespace) -> Dict[str, Any]:
    cell_types = [spec.name for spec in config.panel.ordered_cell_types()]
    if args.cell_type:
        config.panel.cell_type(args.cell_type)
        cell_types = [args.cell_type]
    wrappers: Dict[str, UncertaintyWrapper] = {}
    needed = set(cell_types) | {config.panel.cell_type(c).parent for c in cell_types} - {None}
    for name in needed:
        wrappers[name] = _load_named_wrapper(config, name, args.variant or config.aggregate_variants[name])
    test = _load_split(config, "test")
    records = dataset_bounds(
        wrappers, test, config.panel, cell_types=cell_types, max_workers=config.max_workers
    )
    csv_path = write_bounds_csv(config.paths.outputs / "bounds.csv", records)
    charts = []
    for name in cell_types:
        chosen = [record for record in records if record.cell_type == name]
        svg = population_bounds_svg(chosen, title=f"{name} population bounds ({wrappers[name].name})")
        charts.append(str(atomic_write_text(config.paths.outputs / f"bounds_{name}.svg", svg)))
    inside, total = coverage_summary(records)
    return {"records": len(records), "coverage": {"inside": inside, "total": total}, "csv": str(csv_path), "charts": charts}


def cmd_plot_gating(config: RunConfig, args: argparse.Namespace) -> Dict[str, Any]:
    cell_type = args.cell_type or config.panel.cell_type_names[0]
    spec = config.panel.cell_type(cell_type)
    pair = _check_pair(args.pair or spec.gating_pairs[0], config.panel)
    wrapper = _load_named_wrapper(config, cell_type, args.variant or config.aggregate_variants[cell_type])
    sample = _runtime_basis(config, _find_sample(config, args.sample), cell_type)
    estimates = wrapper_estimate(wrapper, sample)

    transform = config.generator.transform
    gate = config.gates.for_cell_type(cell_type) if config.gates else None
    if gate is not None and tuple(gate.pair) != pair:
        gate = None
    x_name, y_name = config.panel.marker_names[pair[0]], config.panel.marker_names[pair[1]]
    svg = gating_svg(
        transform.forward(sample.markers[:, pair[0]]),
        transform.forward(sample.markers[:, pair[1]]),
        estimates.predictions,
        estimates.uncertainties,
        title=f"{args.sample}: {wrapper.name}",
        x_label=x_name,
        y_label=y_name,
        gate=gate,
    )
    path = config.paths.outputs / f"gating_{args.sample}_{cell_type}_{pair[0]}-{pair[1]}.svg"
    atomic_write_text(path, svg)
    return {"svg": str(path), "events": len(sample), "mean_uncertainty": float(np.mean(estimates.uncertainties)) if len(sample) else None}


def _factor_frame(
    config: RunConfig, sample: Sample, cell_type: str, variant_name: Optional[str]
) -> pd.DataFrame:
    spec = config.panel.cell_type(cell_type)
    predictions = predict_sample(_load_ddm(config, cell_type), sample)
    names = [variant_name] if variant_name else list(DUMP_VARIANTS)
    columns: Dict[str, np.ndarray] = {}
    for name in names:
        factors = assemble_factors(VariantConfig.from_name(name), sample, predictions, spec)
        for index, factor in enumerate(factors.names):
            columns.setdefault(factor, factors.values[:, index])
    frame = pd.DataFrame({"event_id": sample.event_ids.tolist()})
    for factor, values in columns.items():
        frame[factor] = [repr(float(v)) for v in values.tolist()]
    return frame


def cmd_dump_factors(config: RunConfig, args: argparse.Namespace) -> Dict[str, Any]:
    cell_type = args.cell_type or config.panel.cell_type_names[0]
    spec = config.panel.cell_type(cell_type)
    pair = _check_pair(args.pair or spec.gating_pairs[0], config.panel)
    sample = _runtime_basis(config, _find_sample(config, args.sample), cell_type)
    frame = _factor_frame(config, sample, cell_type, args.variant)
    stem = f"factors_{args.sample}_{cell_type}"
    csv_path = atomic_write_text(config.paths.outputs / f"{stem}.csv", frame.to_csv(index=False, lineterminator="\n"))

    transform = config.generator.transform
    x = transform.forward(sample.markers[:, pair[0]])
    y = transform.forward(sample.markers[:, pair[1]])
    charts = []
    for factor in frame.columns[1:]:
        svg = factor_scatter_svg(
            x,
            y,
            frame[factor].astype(float).to_numpy(),
            title=f"{args.sample} {cell_type}: {factor}",
            x_label=config.panel.marker_names[pair[0]],
            y_label=config.panel.marker_names[pair[1]],
        )
        charts.append(str(atomic_write_text(config.paths.outputs / f"{stem}_{factor}.svg", svg)))
    return {"csv": str(csv_path), "events": len(sample), "factors": list(frame.columns[1:]), "charts": charts}


def cmd_server(config: RunConfig, args: argparse.Namespace) -> None:
    from .server.server import run as run_server

    run_server(max_workers=max(config.max_workers, 2), configure_logging=False)


COMMANDS: Dict[str, Callable[[RunConfig, argparse.Namespace], Any]] = {
    "generate": cmd_generate,
    "train": cmd_train,
    "build": cmd_build,
    "evaluate": cmd_evaluate,
    "aggregate": cmd_aggregate,
    "plot-gating": cmd_plot_gating,
    "dump-factors": cmd_dump_factors,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default="demo", help="Run config JSON, or 'demo' for the built-in demo")
    common.add_argument("--seed", type=int, help="Override the config seed")
    common.add_argument("--out", help="Override the outputs directory")
    common.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    common.add_argument("-q", "--quiet", action="store_true", help="Warnings and errors only")

    parser = _Parser(prog=PROG, description="Uncertainty wrappers for automated flow-cytometry gating")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    init_cmd = sub.add_parser("init-config", help="Write the demo run config for editing", parents=[common])
    init_cmd.add_argument("path", help="Destination JSON file")

    generate_cmd = sub.add_parser("generate", help="Generate synthetic train/calibration/test events", parents=[common])
    generate_cmd.add_argument("--shift-sd", type=float, help="Per-sample location shift (dependence experiment)")

    sub.add_parser("train", help="Train one DDM per cell type", parents=[common])
    sub.add_parser("build", help="Build and calibrate the configured wrapper variants", parents=[common])
    sub.add_parser("evaluate", help="Score wrappers on the test split", parents=[common])

    aggregate_cmd = sub.add_parser("aggregate", help="Population-ratio bounds per test sample", parents=[common])
    aggregate_cmd.add_argument("--cell-type", help="Only this cell type")
    aggregate_cmd.add_argument("--variant", help="Variant used for every cell type")

    for name, text in (
        ("plot-gating", "Uncertainty-shaded gating plot of one sample"),
        ("dump-factors", "Per-event quality factors of one sample"),
    ):
        cmd = sub.add_parser(name, help=text, parents=[common])
        cmd.add_argument("--sample", required=True, help="Sample id")
        cmd.add_argument("--cell-type", help="Cell type (default: first panel cell type)")
        cmd.add_argument("--pair", type=_marker_pair, help="Marker indices 'i,j' (default: first gating pair)")
        cmd.add_argument("--variant", help="Variant name")

    sub.add_parser("server", help="Run MCP stdio server", parents=[common])
    return parser


def _load_config(args: argparse.Namespace) -> RunConfig:
    config = load_run_config(args.config)
    if args.seed is not None:
        config.seed = int(args.seed)
    if args.out:
        config.paths.outputs = Path(args.out)
    return config


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.verbose, args.quiet)

    try:
        if args.command == "init-config":
            result = cmd_init_config(args)
        else:
            config = _load_config(args)
            if args.command == "server":
                cmd_server(config, args)
                return EXIT_OK
            result = COMMANDS[args.command](config, args)
    except UncertaintyWrapperError as exc:
        return _fail(exc, exc.exit_code)
    except OSError as exc:
        return _fail(exc, EXIT_IO)
    if args.command not in ("evaluate",):
        _print_json(result)
    return EXIT_OK


def _fail(exc: BaseException, code: int) -> int:
    message = " ".join(str(exc).split()) or type(exc).__name__
    logger.debug("Command failed", exc_info=exc)
    print(f"{PROG}: error: {message}", file=sys.stderr)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
