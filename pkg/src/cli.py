"""
Command-line interface for dgtta.

    dgtta synth-gen     --out data/
    dgtta descriptor    --in vol.bin --out ssc.bin
    dgtta pretrain      --data data/domain_a --pipeline gin_ssc --out ckpt/
    dgtta predict       --ckpt ckpt/ --in vol.bin --out pred.bin
    dgtta tta           --ckpt ckpt/ --target vol.bin --out pred.bin --trace trace.csv
    dgtta evaluate      --pred preds/ --ref data/domain_b --out scores.csv
    dgtta report        --scores scores.csv --out report/
    dgtta run-scenario  --out runs/default

Every subcommand accepts --config (YAML run config), --seed, --workers,
--device and --log-level. Exit codes: 0 success, 2 configuration error,
3 data error, 4 numerical failure, 1 anything else.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, TypeVar

import numpy as np
from pydantic import BaseModel, ValidationError
from rich.console import Console
from rich.table import Table

from . import __version__
from .adaptation.consistency_adapter import ConsistencyAdapter
from .adaptation.ensemble import TTAEnsemble, ensemble_predict
from .adaptation.tent_adapter import TENT_LEARNING_RATE, TentAdapter
from .config.run_config import RunConfig, dump_run_config, load_run_config
from .config.settings import configure_logging, settings
from .exceptions import DataError, DgttaError
from .models.config_models import NormKind, ParamGroup, PipelineKind
from .models.report_models import ScoreTable, Stage
from .networks.checkpoint import load_checkpoint, save_checkpoint, write_trace
from .networks.segnet import build_segnet
from .pipeline.provenance import build_run_manifest, write_run_manifest
from .pipeline.scenario import run_scenario
from .tools.dataset_io import DATASET_MANIFEST, load_dataset, load_predictions, save_dataset, save_predictions
from .tools.phantom_generator import generate
from .tools.ssc_descriptor import ssc_descriptor
from .tools.volume_io import load_volume, save_label_map, save_volume
from .training.pretrainer import pretrain
from .utils.report_generator import ReportGenerator, evaluate, summarize

logger = logging.getLogger(__name__)
console = Console()

M = TypeVar("M", bound=BaseModel)


def _override(model: M, **updates: Any) -> M:
    """Re-validated copy with every non-None update applied."""
    values = {k: v for k, v in updates.items() if v is not None}
    if not values:
        return model
    return type(model).model_validate({**model.model_dump(), **values})


def parse_classes(text: str) -> List[int]:
    """Parse a comma-separated class list such as "1,2,3"."""
    try:
        classes = [int(c) for c in text.split(",") if c.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"Invalid class list '{text}'") from e
    if not classes:
        raise argparse.ArgumentTypeError("Class list must not be empty")
    return classes


def _run_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_run_config(args.config or settings.run_config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.gin_seed is not None:
        cfg = cfg.model_copy(update={"gin": _override(cfg.gin, seed=args.gin_seed)})
    return cfg


def _manifest(args: argparse.Namespace, cfg: RunConfig, directory: Path, checkpoints: Optional[List[Path]] = None) -> None:
    manifest = build_run_manifest(
        config_snapshot=dump_run_config(cfg),
        seeds={"seed": args.seed if args.seed is not None else settings.seed, "gin": cfg.gin.seed},
        checkpoint_dirs=checkpoints or [],
        command_line=args.argv,
    )
    write_run_manifest(manifest, directory)


def cmd_synth_gen(args: argparse.Namespace, cfg: RunConfig) -> None:
    """Generate the paired phantom benchmark into --out."""
    out = Path(args.out)
    domain_a, domain_b = generate(cfg.phantom, workers=args.workers)
    extra = {"seed": cfg.phantom.seed, "phantom_config_hash": cfg.phantom.config_hash()}
    save_dataset(domain_a, out / "domain_a", extra)
    save_dataset(domain_b, out / "domain_b", extra)
    _manifest(args, cfg, out)
    console.print(f"[green]Wrote {len(domain_a)} paired cases to {out}[/green]")


def cmd_descriptor(args: argparse.Namespace, cfg: RunConfig) -> None:
    """Write the 12-channel SSC descriptor of one volume."""
    out = ssc_descriptor(load_volume(args.input), cfg.ssc)
    save_volume(out, args.out)
    console.print(f"[green]Descriptor {out.data.shape} written to {args.out}[/green]")


def cmd_pretrain(args: argparse.Namespace, cfg: RunConfig) -> None:
    """Pre-train one network on a labeled dataset directory."""
    dataset = load_dataset(args.data)
    if args.num_train is not None:
        dataset = dataset.subset(0, args.num_train)
    pipeline = args.pipeline or cfg.pretrain.pipeline
    train_cfg = _override(cfg.pretrain, pipeline=pipeline, epochs=args.epochs)
    model = build_segnet(cfg.segnet_for(pipeline, args.norm_kind)).to(args.device)
    ckpt = pretrain(model, dataset, train_cfg, cfg.patch, cfg.ssc, cfg.gin)
    directory = save_checkpoint(ckpt, args.out)
    _manifest(args, cfg, directory, [directory])
    final = f"{ckpt.loss_trace[-1]:.4f}" if ckpt.loss_trace else "n/a"
    console.print(f"[green]Checkpoint written to {directory} (final loss {final})[/green]")


def cmd_predict(args: argparse.Namespace, cfg: RunConfig) -> None:
    """BS or ensemble prediction of a volume or every case of a dataset directory."""
    checkpoints = [load_checkpoint(path, device=args.device) for path in args.ckpt]
    source = Path(args.input)
    if (source / DATASET_MANIFEST).exists():
        dataset = load_dataset(source, with_labels=False)
        predictions = {s.case_id: ensemble_predict(checkpoints, s.image, cfg.patch) for s in dataset.samples}
        save_predictions(predictions, args.out)
        _manifest(args, cfg, Path(args.out), [Path(p) for p in args.ckpt])
        console.print(f"[green]Predicted {len(predictions)} cases into {args.out}[/green]")
        return
    label = ensemble_predict(checkpoints, load_volume(source), cfg.patch)
    save_label_map(label, args.out)
    console.print(f"[green]Prediction written to {args.out}[/green]")


def cmd_tta(args: argparse.Namespace, cfg: RunConfig) -> None:
    """Adapt a checkpoint to one target volume and write the ensemble prediction."""
    checkpoint = load_checkpoint(args.ckpt, device=args.device)
    target = load_volume(args.target)
    adaptation = _override(
        cfg.adaptation(),
        class_subset=args.classes,
        param_group=args.param_group,
        num_steps=args.steps,
        patches_per_step=args.patches,
        ensemble_size=args.ensemble,
    )
    adapter_cls = ConsistencyAdapter
    if args.method == "tent":
        adapter_cls = TentAdapter
        adaptation = _override(
            adaptation, learning_rate=TENT_LEARNING_RATE, weight_decay=0.0, param_group=ParamGroup.NORM
        )
    ensemble = TTAEnsemble(checkpoint, adaptation, cfg.patch, adapter_cls=adapter_cls)
    members = ensemble.adapt(target, workers=args.workers)
    label = ensemble_predict(members, target, cfg.patch)
    save_label_map(label, args.out)

    traces = ensemble.loss_traces
    if args.trace and traces and traces[0]:
        trace_path = Path(args.trace)
        trace_path.parent.mkdir(parents=True, exist_ok=True)
        write_trace(np.mean(np.asarray(traces), axis=0).tolist(), trace_path)
        if len(traces) > 1:
            for i, trace in enumerate(traces):
                write_trace(trace, trace_path.with_name(f"{trace_path.stem}_m{i}{trace_path.suffix}"))
    if args.save_models:
        for i, member in enumerate(members):
            save_checkpoint(member, Path(args.save_models) / f"member_{i}")

    table = Table(title=f"{adapter_cls.name} adaptation ({len(members)} members)")
    table.add_column("Member")
    table.add_column("Seed", justify="right")
    table.add_column("First loss", justify="right")
    table.add_column("Last loss", justify="right")
    for i, (member, trace) in enumerate(zip(members, traces)):
        first = f"{trace[0]:.4f}" if trace else "-"
        last = f"{trace[-1]:.4f}" if trace else "-"
        table.add_row(str(i), str(member.manifest.seeds.get("adaptation", "")), first, last)
    console.print(table)
    console.print(f"[green]Adapted prediction written to {args.out}[/green]")


def cmd_evaluate(args: argparse.Namespace, cfg: RunConfig) -> None:
    """Score a prediction directory against a labeled dataset directory."""
    references = load_dataset(args.ref)
    if not references.is_labeled:
        raise DataError(f"Reference dataset {args.ref} is not labeled")
    predictions = load_predictions(args.pred, num_classes=references.num_classes)
    table = evaluate(
        predictions, references, args.method, args.stage, args.classes, variant=cfg.scenario.hd95_variant
    )
    out = Path(args.out)
    if args.append and out.exists():
        previous = ScoreTable.from_csv(str(out))
        previous.extend(table.rows)
        table = previous
    out.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(str(out))
    _print_summary(summarize(table))
    console.print(f"[green]{len(table.rows)} score rows written to {out}[/green]")


def cmd_report(args: argparse.Namespace, cfg: RunConfig) -> None:
    """Render summary tables and figures from a score CSV."""
    table = ScoreTable.from_csv(args.scores)
    reference = args.reference if args.reference is not None else cfg.scenario.reference
    keys = {f"{r.method}/{r.stage}" for r in table.rows}
    if reference is not None and reference not in keys:
        logger.warning(f"Reference row '{reference}' not in {args.scores}; skipping significance tests")
        reference = None
    out = ReportGenerator().generate(table, args.out, reference=reference, figure_format=args.format)
    _manifest(args, cfg, out)
    _print_summary(summarize(table, reference))
    console.print(f"[green]Report written to {out}[/green]")


def cmd_run_scenario(args: argparse.Namespace, cfg: RunConfig) -> None:
    """Run the full benchmark protocol."""
    report = run_scenario(cfg, Path(args.out), workers=args.workers, device=args.device, command_line=args.argv)
    console.print(f"[green]Scenario report written to {report}[/green]")


def _print_summary(summary: Any) -> None:
    if summary.empty:
        return
    table = Table(title="Summary")
    for column in ("Method", "Stage", "Dice", "HD95 [mm]", "Rank", "Sig."):
        table.add_column(column)
    for rec in summary.to_dict(orient="records"):
        table.add_row(
            rec["method"],
            rec["stage"],
            f"{rec['dice_mean']:.3f} ± {rec['dice_std']:.3f}",
            f"{rec['hd95_mean']:.2f} ± {rec['hd95_std']:.2f}",
            f"{rec['mean_rank']:.1f}",
            rec.get("significance", ""),
        )
    console.print(table)


COMMANDS: Dict[str, Callable[[argparse.Namespace, RunConfig], None]] = {
    "synth-gen": cmd_synth_gen,
    "descriptor": cmd_descriptor,
    "pretrain": cmd_pretrain,
    "predict": cmd_predict,
    "tta": cmd_tta,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
    "run-scenario": cmd_run_scenario,
}


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with one sub-parser per command."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run-config file")
    common.add_argument("--seed", type=int, help="Seed applied to every config section")
    common.add_argument("--gin-seed", type=int, help="Seed of the GIN augmentation stream")
    common.add_argument("--workers", type=int, default=settings.workers)
    common.add_argument("--device", default=settings.device)
    common.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    parser = argparse.ArgumentParser(prog="dgtta", description=__doc__.splitlines()[1])
    parser.add_argument("--version", action="version", version=f"dgtta {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-gen", parents=[common], help="Generate the phantom benchmark")
    p.add_argument("--out", required=True)

    p = sub.add_parser("descriptor", parents=[common], help="Compute the SSC descriptor of a volume")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("pretrain", parents=[common], help="Pre-train on labeled source data")
    p.add_argument("--data", required=True, help="Dataset directory")
    p.add_argument("--num-train", type=int, help="Use only the leading N cases")
    p.add_argument("--pipeline", type=PipelineKind, choices=list(PipelineKind))
    p.add_argument("--norm-kind", type=NormKind, choices=list(NormKind))
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("predict", parents=[common], help="BS or ensemble inference")
    p.add_argument("--ckpt", required=True, nargs="+", help="One or more checkpoint directories")
    p.add_argument("--in", dest="input", required=True, help="Volume file or dataset directory")
    p.add_argument("--out", required=True)

    p = sub.add_parser("tta", parents=[common], help="Adapt to one target volume")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--method", choices=["consistency", "tent"], default="consistency")
    p.add_argument("--classes", type=parse_classes)
    p.add_argument("--param-group", type=ParamGroup, choices=list(ParamGroup))
    p.add_argument("--steps", type=int)
    p.add_argument("--patches", type=int)
    p.add_argument("--ensemble", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--trace", help="Mean step,loss trace (per-member files get an _m<i> suffix)")
    p.add_argument("--save-models", help="Directory for the adapted member checkpoints")

    p = sub.add_parser("evaluate", parents=[common], help="Score predictions")
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--classes", type=parse_classes)
    p.add_argument("--method", default="model")
    p.add_argument("--stage", default=Stage.BASE.value)
    p.add_argument("--append", action="store_true", help="Add rows to an existing score CSV")
    p.add_argument("--out", required=True)

    p = sub.add_parser("report", parents=[common], help="Summary tables and figures from scores")
    p.add_argument("--scores", required=True)
    p.add_argument("--reference", help='Row key such as "plain/BS"')
    p.add_argument("--format", choices=["png", "svg"], default="png")
    p.add_argument("--out", required=True)

    p = sub.add_parser("run-scenario", parents=[common], help="Run the full benchmark protocol")
    p.add_argument("--out", default=settings.output_dir)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Entry point of the `dgtta` console script."""
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    args.argv = ["dgtta", *argv]
    configure_logging(args.log_level)
    try:
        cfg = _run_config(args)
        COMMANDS[args.command](args, cfg)
    except DgttaError as e:
        console.print(f"[red]Error:[/red] {e}")
        return e.exit_code
    except ValidationError as e:
        console.print(f"[red]Invalid configuration:[/red] {e}")
        return 2
    except Exception as e:
        logger.exception(f"Unexpected failure in '{args.command}': {e}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
