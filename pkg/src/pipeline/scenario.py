"""
End-to-end scenario runner.

Runs the benchmark protocol as a sequence of named stages:

    data      generate (or load) the paired phantom benchmark and split it
    pretrain  one checkpoint per pipeline variant and normalization kind
    predict   BS predictions on the cross-domain (and in-domain) test cases
    tta       adapted-ensemble predictions per parameter group
    evaluate  score every stored prediction set into scores.csv
    report    summary tables, significance stars and figures from scores.csv

Output layout under the run directory:

    data/domain_a, data/domain_b          (generated benchmarks only)
    checkpoints/<method>/
    predictions/<method>/<stage>/<case>.bin
    traces/<method>_<stage>_<case>_m<i>.csv
    scores.csv
    report/

A failing stage raises StageError naming it; artifacts of finished stages
stay on disk.
"""

import logging
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple, Type

import numpy as np
import torch

from ..adaptation.base_adapter import BaseAdapter
from ..adaptation.consistency_adapter import ConsistencyAdapter
from ..adaptation.ensemble import TTAEnsemble, predict
from ..adaptation.tent_adapter import TENT_LEARNING_RATE, TentAdapter
from ..config.run_config import RunConfig, dump_run_config
from ..exceptions import DataError, StageError
from ..models.config_models import AdaptationConfig, NormKind, ParamGroup, PipelineKind
from ..models.report_models import ScoreTable, Stage
from ..models.volume_models import Dataset, LabelMap, Volume
from ..networks.checkpoint import Checkpoint, save_checkpoint, write_trace
from ..networks.segnet import build_segnet
from ..tools.dataset_io import load_dataset, load_predictions, save_dataset, save_predictions
from ..tools.phantom_generator import benchmark_split, generate
from ..training.pretrainer import pretrain
from ..utils.report_generator import ReportGenerator, evaluate, row_key
from .provenance import build_run_manifest, write_run_manifest

logger = logging.getLogger(__name__)

DATA_DIR = "data"
CHECKPOINT_DIR = "checkpoints"
PREDICTION_DIR = "predictions"
TRACE_DIR = "traces"
REPORT_DIR = "report"
SCORES_FILE = "scores.csv"

STAGE_BY_GROUP = {
    ParamGroup.ALL: Stage.ADAPTED,
    ParamGroup.NORM: Stage.ADAPTED_NORM,
    ParamGroup.ENCODER: Stage.ADAPTED_ENCODER,
    ParamGroup.DECODER: Stage.ADAPTED_DECODER,
}

IN_DOMAIN_SUFFIX = "-indomain"
TENT_SUFFIX = "-tent"


def method_name(pipeline: PipelineKind, norm_kind: NormKind) -> str:
    """Result-table method of a pipeline variant, e.g. "gin_ssc" or "plain_bn"."""
    return pipeline.value + ("_bn" if norm_kind == NormKind.BATCH else "")


def stage_dir_name(stage: str) -> str:
    return stage.replace("+", "plus")


class ScenarioRunner:
    """
    Runs one benchmark scenario into a run directory.

    The tta stage only ever sees target image volumes; source data reaches
    the models through the pretrain stage alone.
    """

    def __init__(
        self,
        config: RunConfig,
        out_dir: Path,
        workers: int = 1,
        device: str = "cpu",
        command_line: Optional[List[str]] = None,
    ):
        """
        Initialize the runner.

        Args:
            config: Full run config (scenario section selects the variants)
            out_dir: Run directory (created)
            workers: Threads for phantom generation and ensemble members
            device: Torch device of every model
            command_line: Recorded in run manifests
        """
        self.config = config
        self.out = Path(out_dir)
        self.workers = workers
        self.device = device
        self.command_line = command_line or []
        self.timings: Dict[str, float] = {}

        self.train: Optional[Dataset] = None
        self.in_domain_test: Optional[Dataset] = None
        self.cross_test: Optional[Dataset] = None
        self.checkpoints: Dict[str, Checkpoint] = {}
        self.checkpoint_dirs: Dict[str, Path] = {}
        # (method, stage, prediction dir, "cross" | "in_domain")
        self.prediction_sets: List[Tuple[str, str, Path, str]] = []
        self.traces: Dict[str, List[float]] = {}

    @property
    def seeds(self) -> Dict[str, int]:
        cfg = self.config
        return {
            "phantom": cfg.phantom.seed,
            "init": cfg.segnet.seed,
            "pretrain": cfg.pretrain.seed,
            "gin": cfg.gin.seed,
            "tta": cfg.tta.seed,
        }

    def _write_manifest(self, directory: Path, checkpoint_dirs: Optional[List[Path]] = None) -> None:
        manifest = build_run_manifest(
            config_snapshot=dump_run_config(self.config),
            seeds=self.seeds,
            checkpoint_dirs=checkpoint_dirs or [],
            command_line=self.command_line,
            timings=self.timings,
        )
        write_run_manifest(manifest, directory)

    @contextmanager
    def stage(self, name: str) -> Iterator[None]:
        """Time a stage; failures become StageError(name)."""
        logger.info(f"Stage '{name}' started")
        started = time.perf_counter()
        try:
            yield
        except Exception as e:
            logger.error(f"Stage '{name}' failed: {e}")
            raise StageError(name, e) from e
        else:
            logger.info(f"Stage '{name}' finished in {time.perf_counter() - started:.1f}s")
        finally:
            self.timings[name] = round(time.perf_counter() - started, 3)

    def run(self) -> Path:
        """Run every stage; returns the report directory."""
        self.out.mkdir(parents=True, exist_ok=True)
        torch.use_deterministic_algorithms(True, warn_only=True)
        with self.stage("data"):
            self.prepare_data()
        with self.stage("pretrain"):
            self.pretrain_models()
        with self.stage("predict"):
            self.predict_base()
        with self.stage("tta"):
            self.adapt_and_predict()
        with self.stage("evaluate"):
            table = self.evaluate()
        with self.stage("report"):
            report_dir = self.report(table)
        self._write_manifest(self.out, list(self.checkpoint_dirs.values()))
        logger.info(f"Scenario finished; report in {report_dir}")
        return report_dir

    def prepare_data(self) -> None:
        """Load or generate the benchmark and split it into train/test sets."""
        cfg = self.config
        if cfg.scenario.data_dir is not None:
            root = Path(cfg.scenario.data_dir)
            domain_a = load_dataset(root / "domain_a")
            domain_b = load_dataset(root / "domain_b")
        else:
            domain_a, domain_b = generate(cfg.phantom, workers=self.workers)
            root = self.out / DATA_DIR
            extra = {"seed": cfg.phantom.seed, "phantom_config_hash": cfg.phantom.config_hash()}
            save_dataset(domain_a, root / "domain_a", extra)
            save_dataset(domain_b, root / "domain_b", extra)
            self._write_manifest(root)

        train, in_domain, cross = benchmark_split(domain_a, domain_b, cfg.phantom.num_train)
        if len(train) == 0:
            raise DataError("The benchmark has no training cases")
        if len(cross) == 0:
            raise DataError("The benchmark has no cross-domain test cases")
        limit = cfg.scenario.max_test_cases
        if limit is not None:
            in_domain, cross = in_domain.subset(0, limit), cross.subset(0, limit)
        self.train, self.in_domain_test, self.cross_test = train, in_domain, cross
        logger.info(f"Benchmark: {len(train)} training, {len(in_domain)} in-domain, {len(cross)} cross-domain cases")

    def pretrain_models(self) -> None:
        """One checkpoint per (pipeline, norm kind)."""
        assert self.train is not None
        cfg = self.config
        for pipeline in cfg.scenario.pipelines:
            for norm_kind in cfg.scenario.norm_kinds:
                method = method_name(pipeline, norm_kind)
                model = build_segnet(cfg.segnet_for(pipeline, norm_kind)).to(self.device)
                ckpt = pretrain(
                    model,
                    self.train,
                    cfg.pretrain.model_copy(update={"pipeline": pipeline}),
                    cfg.patch,
                    cfg.ssc,
                    cfg.gin,
                )
                directory = save_checkpoint(ckpt, self.out / CHECKPOINT_DIR / method)
                self._write_manifest(directory, [directory])
                self.checkpoints[method] = ckpt
                self.checkpoint_dirs[method] = directory

    def _store(
        self, source: str, method: str, stage: str, predictions: Dict[str, LabelMap], reference: str
    ) -> None:
        directory = save_predictions(
            predictions, self.out / PREDICTION_DIR / method / stage_dir_name(stage)
        )
        self._write_manifest(directory, [self.checkpoint_dirs[source]])
        self.prediction_sets.append((method, stage, directory, reference))

    def predict_base(self) -> None:
        """Unadapted predictions of every checkpoint."""
        assert self.cross_test is not None and self.in_domain_test is not None
        patch = self.config.patch
        for method, ckpt in self.checkpoints.items():
            cross = {s.case_id: predict(ckpt, s.image, patch) for s in self.cross_test.samples}
            self._store(method, method, Stage.BASE.value, cross, "cross")
            if self.config.scenario.evaluate_in_domain and len(self.in_domain_test) > 0:
                own = {s.case_id: predict(ckpt, s.image, patch) for s in self.in_domain_test.samples}
                self._store(method, method + IN_DOMAIN_SUFFIX, Stage.BASE.value, own, "in_domain")

    def _target_images(self) -> Dict[str, Volume]:
        assert self.cross_test is not None
        return {s.case_id: s.image for s in self.cross_test.samples}

    def _adapt_row(
        self,
        source: str,
        method: str,
        stage: str,
        cfg: AdaptationConfig,
        adapter_cls: Type[BaseAdapter],
    ) -> None:
        ckpt = self.checkpoints[source]
        predictions: Dict[str, LabelMap] = {}
        traces: List[List[float]] = []
        trace_dir = self.out / TRACE_DIR
        trace_dir.mkdir(parents=True, exist_ok=True)
        for cid, image in self._target_images().items():
            ensemble = TTAEnsemble(ckpt, cfg, self.config.patch, adapter_cls=adapter_cls)
            ensemble.adapt(image, workers=self.workers)
            predictions[cid] = ensemble.predict(image)
            for i, trace in enumerate(ensemble.loss_traces):
                write_trace(trace, trace_dir / f"{method}_{stage_dir_name(stage)}_{cid}_m{i}.csv")
                traces.append(trace)
        self._store(source, method, stage, predictions, "cross")
        if traces and all(traces):
            self.traces[row_key(method, stage)] = np.mean(np.asarray(traces), axis=0).tolist()

    def adapt_and_predict(self) -> None:
        """Adapted-ensemble predictions per parameter group (and Tent when enabled)."""
        adaptation = self.config.adaptation()
        for method, ckpt in self.checkpoints.items():
            for group in self.config.scenario.param_groups:
                stage = STAGE_BY_GROUP[group].value
                cfg = adaptation.model_copy(update={"param_group": group})
                self._adapt_row(method, method, stage, cfg, ConsistencyAdapter)
            if self.config.scenario.tent_baseline and ckpt.manifest.architecture.norm_kind == NormKind.BATCH:
                tent = adaptation.model_copy(
                    update={
                        "learning_rate": TENT_LEARNING_RATE,
                        "weight_decay": 0.0,
                        "param_group": ParamGroup.NORM,
                        "ensemble_size": 1,
                    }
                )
                self._adapt_row(method, method + TENT_SUFFIX, Stage.ADAPTED.value, tent, TentAdapter)
        if self.traces:
            self._write_manifest(self.out / TRACE_DIR)

    def evaluate(self) -> ScoreTable:
        """Score the stored predictions (read back from disk) into scores.csv."""
        assert self.cross_test is not None and self.in_domain_test is not None
        references = {"cross": self.cross_test, "in_domain": self.in_domain_test}
        variant = self.config.scenario.hd95_variant
        table = ScoreTable()
        for method, stage, directory, reference in self.prediction_sets:
            refs = references[reference]
            predictions = load_predictions(directory, num_classes=refs.num_classes)
            table.extend(evaluate(predictions, refs, method, stage, variant=variant).rows)
        table.to_csv(str(self.out / SCORES_FILE))
        logger.info(f"Wrote {len(table.rows)} score rows to {self.out / SCORES_FILE}")
        return table

    def report(self, table: ScoreTable) -> Path:
        """Report recomputed from scores.csv."""
        scores = ScoreTable.from_csv(str(self.out / SCORES_FILE))
        reference = self.config.scenario.reference
        keys = {row_key(r.method, r.stage) for r in table.rows}
        if reference is not None and reference not in keys:
            logger.warning(f"Reference row '{reference}' was not produced; skipping significance tests")
            reference = None
        directory = ReportGenerator().generate(
            scores,
            self.out / REPORT_DIR,
            reference=reference,
            traces=self.traces or None,
            figure_format=self.config.scenario.figure_format,
        )
        self._write_manifest(directory)
        return directory


def run_scenario(
    config: RunConfig,
    out_dir: Path,
    workers: int = 1,
    device: str = "cpu",
    command_line: Optional[List[str]] = None,
) -> Path:
    """Run a full scenario; returns the report directory."""
    return ScenarioRunner(config, Path(out_dir), workers, device, command_line).run()
