"""End-to-end comparison of the Bayes and ML rules on a synthetic corpus.

Training scenes give pixel-wise and global priors. Each test scene gets exact
posteriors under the pixel-wise priors, is decided by both rules and
post-processed, then evaluated. The report carries the metrics of both rules,
the analysis results, empirical costs and a verdict per expected property.

The generator places objects from per-class placement distributions and has no
closed-form per-pixel prior. The smoothed priors estimated on the training
scenes stand in for the true priors: the oracle posteriors, the ML rule and the
inverse-proportional cost all use them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import logging
import math
from pathlib import Path
from typing import Any

from joblib import Parallel, delayed
import numpy as np

from ..analysis import (
    EmpiricalCdf,
    Heatmap,
    SizeHistogram,
    detection_histograms,
    dominates_first_order,
    empirical_cdf,
    mean_cdf_gap,
    miou_histogram,
    nesting_fraction,
    nondetection_heatmaps,
    rule_disagreement,
    write_cdf_csv,
    write_heatmap,
    write_histogram_csv,
)
from ..components import ComponentSet, PostprocessConfig, postprocess
from ..const import (
    ATTR_VERDICTS,
    COST_MARGIN_STANDARD_ERRORS,
    DEFAULT_BIN_EDGES,
    DEFAULT_COST_CONSTANT,
    DEFAULT_MIOU_BINS,
    DOMINANCE_TOLERANCE,
    NON_DETECTION_RATIO_LIMIT,
    PACKAGE_VERSION,
    PGM_MAX_16BIT,
    PRIOR_MODE_GLOBAL,
    PRIOR_MODE_LOCAL,
    REPORT_SCHEMA_VERSION,
    RULE_BAYES,
    RULE_ML,
    RULES,
    TEST_SPLIT,
    TRAIN_SPLIT,
)
from ..decision import (
    CostKind,
    CostModel,
    CostWeighting,
    DecisionRule,
    average_probability_maps,
    decide,
    expected_cost,
    pixel_cost,
)
from ..exceptions import ConfigError, EmptyInputError
from ..metrics import MetricsAccumulator, MiouPolicy
from ..priors import PriorConfig, class_statistics, estimate_priors, prior_heatmap
from ..tensor_io import GlobalPriors, LabelMap, PriorStack, write_pgm
from .rng import corpus_seeds
from .scenario import ScenarioConfig, global_vs_local_scenario, write_scenario_masks
from .scene import SynthConfig, dropout_samples, generate_scene, oracle_posteriors

_LOGGER = logging.getLogger(__name__)

ML_PRIORS_UNIFORM = "uniform"


@dataclass(frozen=True)
class ExperimentConfig:
    """Corpus sizes and every stage parameter of :func:`run_experiment`.

    ``ml_priors`` selects what the ML rule divides by: the pixel-wise priors
    (``local``), the global priors (``global``) or uniform priors
    (``uniform``, which makes ML coincide with Bayes).
    """

    synth: SynthConfig
    train_images: int
    test_images: int
    focus_class: int
    priors: PriorConfig = field(default_factory=PriorConfig)
    postprocess: PostprocessConfig = field(default_factory=PostprocessConfig)
    bin_edges: tuple[float, ...] = DEFAULT_BIN_EDGES
    miou_bins: int = DEFAULT_MIOU_BINS
    ml_priors: str = PRIOR_MODE_LOCAL
    dropout_samples: int = 0
    dropout_noise_std: float = 0.3
    cost_constant: float = DEFAULT_COST_CONSTANT
    seed: int = 0
    scenario: ScenarioConfig | None = None

    def __post_init__(self) -> None:
        if not 0 <= self.focus_class < self.synth.num_classes:
            raise ConfigError(f"focus_class {self.focus_class} is not a class id")
        if self.ml_priors not in (PRIOR_MODE_LOCAL, PRIOR_MODE_GLOBAL, ML_PRIORS_UNIFORM):
            raise ConfigError(f"Unknown ml_priors {self.ml_priors!r}")
        if self.train_images < 0 or self.test_images < 0:
            raise ConfigError("Corpus sizes must not be negative")
        if self.dropout_samples < 0:
            raise ConfigError("dropout_samples must not be negative")

    def to_json(self) -> dict[str, Any]:
        return {
            "synth": self.synth.to_json(),
            "train_images": self.train_images,
            "test_images": self.test_images,
            "focus_class": self.focus_class,
            "priors": self.priors.to_json(),
            "postprocess": self.postprocess.to_json(),
            "bin_edges": ["inf" if math.isinf(e) else e for e in self.bin_edges],
            "miou_bins": self.miou_bins,
            "ml_priors": self.ml_priors,
            "dropout_samples": self.dropout_samples,
            "dropout_noise_std": self.dropout_noise_std,
            "cost_constant": self.cost_constant,
            "seed": self.seed,
        }


@dataclass
class SceneOutcome:
    """Everything kept from one test scene."""

    image_id: str
    gt: LabelMap
    predictions: dict[str, LabelMap]
    gt_set: ComponentSet
    pred_sets: dict[str, ComponentSet]
    symmetric_cost: dict[str, float]
    inverse_cost: dict[str, float]
    disagreeing: int
    disagreeing_on_boundary: int
    nested_segments: int
    bayes_focus_segments: int


@dataclass(frozen=True)
class ExperimentReport:
    """The JSON-ready report and its verdicts."""

    report: dict[str, Any]
    verdicts: dict[str, dict[str, Any]]

    @property
    def passed(self) -> bool:
        return all(verdict["passed"] for verdict in self.verdicts.values())


def _ml_priors(
    config: ExperimentConfig, local: PriorStack, global_priors: GlobalPriors
) -> PriorStack | GlobalPriors:
    if config.ml_priors == PRIOR_MODE_GLOBAL:
        return global_priors
    if config.ml_priors == ML_PRIORS_UNIFORM:
        n = config.synth.num_classes
        return GlobalPriors(np.full(n, 1.0 / n))
    return local


def _evaluate_scene(
    config: ExperimentConfig,
    index: int,
    seed: int,
    local: PriorStack,
    rules: dict[str, DecisionRule],
) -> SceneOutcome:
    image_id = f"test_{index:04d}"
    scene = generate_scene(config.synth, seed)
    probs = oracle_posteriors(scene.features, config.synth, local)
    if config.dropout_samples:
        probs = average_probability_maps(
            dropout_samples(probs, config.dropout_samples, config.dropout_noise_std, seed)
        )
    pp = config.postprocess
    predictions = {rule: decide(probs, rules[rule]) for rule in RULES}
    pred_sets = {
        rule: postprocess(labels, pp.connectivity, pp.min_size, pp.max_gap, image_id)
        for rule, labels in predictions.items()
    }
    gt_set = postprocess(scene.gt, pp.connectivity, pp.min_size, pp.max_gap, image_id)
    symmetric = CostModel(CostKind.SYMMETRIC, config.cost_constant)
    inverse = CostModel(
        CostKind.INVERSE_PROPORTIONAL, config.cost_constant, local, CostWeighting.TRUE
    )
    disagreement = rule_disagreement(
        predictions[RULE_BAYES], predictions[RULE_ML], scene.gt
    )
    disagreeing = int(disagreement.mask.sum())
    bayes_focus = pred_sets[RULE_BAYES].count(config.focus_class)
    nested = nesting_fraction(pred_sets[RULE_BAYES], predictions[RULE_ML], config.focus_class)
    return SceneOutcome(
        image_id=image_id,
        gt=scene.gt,
        predictions=predictions,
        gt_set=gt_set,
        pred_sets=pred_sets,
        symmetric_cost={
            rule: pixel_cost(labels, scene.gt, symmetric).mean
            for rule, labels in predictions.items()
        },
        inverse_cost={
            rule: pixel_cost(labels, scene.gt, inverse).mean
            for rule, labels in predictions.items()
        },
        disagreeing=disagreeing,
        disagreeing_on_boundary=round((disagreement.boundary_share or 0.0) * disagreeing),
        nested_segments=round((nested or 0.0) * bayes_focus),
        bayes_focus_segments=bayes_focus,
    )


def _paired_difference(first: list[float], second: list[float]) -> dict[str, Any]:
    """Mean and standard error of ``first - second`` over scenes."""
    diff = np.asarray(first) - np.asarray(second)
    mean = float(diff.mean())
    stderr = float(diff.std(ddof=1) / math.sqrt(diff.size)) if diff.size > 1 else 0.0
    return {
        "mean_difference": mean,
        "standard_error": stderr,
        "passed": mean > 0 and mean >= COST_MARGIN_STANDARD_ERRORS * stderr,
    }


def _cdf_or_none(values: list[float]) -> EmpiricalCdf | None:
    return empirical_cdf(values) if values else None


def _dominance_verdict(
    f1: EmpiricalCdf | None, f2: EmpiricalCdf | None
) -> dict[str, Any]:
    """Verdict on F1 ≺ F2 within the dominance tolerance."""
    if f1 is None or f2 is None:
        return {"passed": False, "reason": "no segments to compare"}
    result = dominates_first_order(f1, f2)
    return {
        **result.to_json(),
        "tolerance": DOMINANCE_TOLERANCE,
        "mean_gap": mean_cdf_gap(f1, f2),
        "passed": result.holds_within(DOMINANCE_TOLERANCE),
    }


def run_experiment(
    config: ExperimentConfig,
    seed: int | None = None,
    threads: int | None = None,
    artifact_dir: str | Path | None = None,
) -> ExperimentReport:
    """Run the full pipeline and return the report.

    Args:
        config: Experiment configuration.
        seed: Master seed; defaults to ``config.seed``.
        threads: Worker threads; None uses every available core. Results do
            not depend on the thread count.
        artifact_dir: Where to write CSV/PGM artifacts; skipped when None.

    Raises:
        EmptyInputError: If either corpus is empty.
    """
    master = config.seed if seed is None else seed
    if config.test_images == 0:
        raise EmptyInputError("The test corpus is empty")
    if config.train_images == 0:
        raise EmptyInputError("The training corpus is empty")
    n_jobs = -1 if threads is None else threads
    synth, focus = config.synth, config.focus_class

    train = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(generate_scene)(synth, s)
        for s in corpus_seeds(master, config.train_images, TRAIN_SPLIT)
    )
    train_labels = [scene.gt for scene in train]
    local, global_priors = estimate_priors(train_labels, synth.num_classes, config.priors)
    rules = {
        RULE_BAYES: DecisionRule.bayes(),
        RULE_ML: DecisionRule.maximum_likelihood(_ml_priors(config, local, global_priors)),
    }
    _LOGGER.info(
        "SegDecide Experiment: Evaluating %d test scenes with ML on %s priors",
        config.test_images,
        config.ml_priors,
    )
    outcomes: list[SceneOutcome] = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(_evaluate_scene)(config, index, s, local, rules)
        for index, s in enumerate(corpus_seeds(master, config.test_images, TEST_SPLIT))
    )

    accumulators = {rule: MetricsAccumulator(synth.num_classes) for rule in RULES}
    for outcome in outcomes:
        for rule in RULES:
            accumulators[rule].add(
                outcome.image_id,
                outcome.predictions[rule],
                outcome.gt,
                outcome.pred_sets[rule],
                outcome.gt_set,
            )
    metrics = {rule: acc.report_dict() for rule, acc in accumulators.items()}
    matches = {rule: acc.matches for rule, acc in accumulators.items()}

    recall_cdfs = {
        rule: _cdf_or_none(
            [
                s.recall
                for m in matches[rule]
                for s in m.gt_scores
                if s.segment.class_id == focus
            ]
        )
        for rule in RULES
    }
    precision_cdfs = {
        rule: _cdf_or_none(
            [
                s.precision
                for m in matches[rule]
                for s in m.pred_scores
                if s.segment.class_id == focus
            ]
        )
        for rule in RULES
    }
    # Bayes recall CDF ≺ ML recall CDF, ML precision CDF ≺ Bayes precision CDF.
    recall_verdict = _dominance_verdict(recall_cdfs[RULE_BAYES], recall_cdfs[RULE_ML])
    precision_verdict = _dominance_verdict(
        precision_cdfs[RULE_ML], precision_cdfs[RULE_BAYES]
    )
    false_hist, missed_hist = detection_histograms(matches, focus, config.bin_edges)
    heatmaps = nondetection_heatmaps(
        [o.gt_set for o in outcomes],
        {rule: [o.predictions[rule] for o in outcomes] for rule in RULES},
        focus,
    )
    mious = miou_histogram(
        {rule: accumulators[rule].per_image_miou(MiouPolicy.SKIP_UNDEFINED) for rule in RULES},
        config.miou_bins,
    )

    non_detections = {
        rule: sum(len(m.non_detections(focus)) for m in matches[rule]) for rule in RULES
    }
    components = {
        rule: sum(o.pred_sets[rule].count(focus) for o in outcomes) for rule in RULES
    }
    gt_components = sum(o.gt_set.count(focus) for o in outcomes)
    pixel = {
        rule: metrics[rule]["pooled_class_scores"][focus] for rule in RULES
    }
    pixel_passed = all(
        pixel[rule][key] is not None for rule in RULES for key in ("recall", "precision")
    ) and bool(
        pixel[RULE_ML]["recall"] > pixel[RULE_BAYES]["recall"]
        and pixel[RULE_BAYES]["precision"] > pixel[RULE_ML]["precision"]
    )

    symmetric_verdict = _paired_difference(
        [o.symmetric_cost[RULE_ML] for o in outcomes],
        [o.symmetric_cost[RULE_BAYES] for o in outcomes],
    )
    inverse_verdict = _paired_difference(
        [o.inverse_cost[RULE_BAYES] for o in outcomes],
        [o.inverse_cost[RULE_ML] for o in outcomes],
    )
    verdicts: dict[str, dict[str, Any]] = {
        "cost_optimality": {
            "symmetric_ml_minus_bayes": symmetric_verdict,
            "inverse_bayes_minus_ml": inverse_verdict,
            "margin_standard_errors": COST_MARGIN_STANDARD_ERRORS,
            "passed": symmetric_verdict["passed"] and inverse_verdict["passed"],
        },
        "recall_dominance": recall_verdict,
        "precision_dominance": precision_verdict,
        "non_detection": {
            **non_detections,
            "ratio_limit": NON_DETECTION_RATIO_LIMIT,
            "passed": non_detections[RULE_ML]
            <= NON_DETECTION_RATIO_LIMIT * non_detections[RULE_BAYES],
        },
        "component_count": {
            **components,
            "passed": components[RULE_ML] >= components[RULE_BAYES],
        },
        "pixel_scores": {
            "recall": {rule: pixel[rule]["recall"] for rule in RULES},
            "precision": {rule: pixel[rule]["precision"] for rule in RULES},
            "passed": pixel_passed,
        },
    }
    scenario = None
    if config.scenario is not None:
        scenario = global_vs_local_scenario(config.scenario)
        verdicts["scenario"] = scenario.to_json()

    pooled_costs = {}
    for rule in RULES:
        pooled = accumulators[rule].pooled
        pooled_costs[rule] = {
            "symmetric": expected_cost(
                pooled, CostModel(CostKind.SYMMETRIC, config.cost_constant)
            ),
            "inverse_predicted_global": expected_cost(
                pooled,
                CostModel(
                    CostKind.INVERSE_PROPORTIONAL, config.cost_constant, global_priors
                ),
            ),
        }
    disagreeing = sum(o.disagreeing for o in outcomes)
    bayes_focus = sum(o.bayes_focus_segments for o in outcomes)
    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "version": PACKAGE_VERSION,
        "seed": master,
        "config": config.to_json(),
        "priors": {
            "global": global_priors.to_json(),
            "train_statistics": class_statistics(train_labels, synth.num_classes).to_json(),
        },
        "metrics": metrics,
        "analysis": {
            "focus_class": focus,
            "recall_cdf_samples": {
                rule: cdf.count if cdf else 0 for rule, cdf in recall_cdfs.items()
            },
            "precision_cdf_samples": {
                rule: cdf.count if cdf else 0 for rule, cdf in precision_cdfs.items()
            },
            "false_detection_histogram": false_hist.to_json(),
            "non_detection_histogram": missed_hist.to_json(),
            "heatmap_max_counts": {
                rule: {hm.kind: hm.max_count for hm in pair} for rule, pair in heatmaps.items()
            },
            "miou_histogram": mious.to_json(),
            "components": {**components, "gt": gt_components},
            "non_detections": non_detections,
            "disagreement": {
                "rate": disagreeing / (len(outcomes) * synth.height * synth.width),
                "boundary_share": (
                    sum(o.disagreeing_on_boundary for o in outcomes) / disagreeing
                    if disagreeing
                    else None
                ),
            },
            "nesting_fraction": (
                sum(o.nested_segments for o in outcomes) / bayes_focus
                if bayes_focus
                else None
            ),
        },
        "costs": {
            "per_scene_mean": {
                "symmetric": {
                    rule: float(np.mean([o.symmetric_cost[rule] for o in outcomes]))
                    for rule in RULES
                },
                "inverse_true_local": {
                    rule: float(np.mean([o.inverse_cost[rule] for o in outcomes]))
                    for rule in RULES
                },
            },
            "pooled": pooled_costs,
        },
        ATTR_VERDICTS: verdicts,
        "passed": all(v["passed"] for v in verdicts.values()),
    }

    if artifact_dir is not None:
        _write_artifacts(
            Path(artifact_dir),
            recall_cdfs,
            precision_cdfs,
            false_hist,
            missed_hist,
            heatmaps,
            local,
            focus,
        )
        if scenario is not None:
            write_scenario_masks(scenario, artifact_dir)
    _LOGGER.info(
        "SegDecide Experiment: Finished, %d of %d verdicts passed",
        sum(1 for v in verdicts.values() if v["passed"]),
        len(verdicts),
    )
    return ExperimentReport(report=report, verdicts=verdicts)


def _write_artifacts(
    directory: Path,
    recall_cdfs: dict[str, EmpiricalCdf | None],
    precision_cdfs: dict[str, EmpiricalCdf | None],
    false_hist: SizeHistogram,
    missed_hist: SizeHistogram,
    heatmaps: dict[str, tuple[Heatmap, Heatmap]],
    local: PriorStack,
    focus: int,
) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    if all(recall_cdfs.values()):
        write_cdf_csv(directory / "recall_cdf.csv", recall_cdfs)
    if all(precision_cdfs.values()):
        write_cdf_csv(directory / "precision_cdf.csv", precision_cdfs)
    write_histogram_csv(directory / "false_detection_hist.csv", false_hist)
    write_histogram_csv(directory / "non_detection_hist.csv", missed_hist)
    for rule, pair in heatmaps.items():
        for heatmap in pair:
            write_heatmap(directory / f"heatmap_{rule}_{heatmap.kind}.pgm", heatmap)
    write_pgm(directory / f"prior_{focus}.pgm", prior_heatmap(local, focus), PGM_MAX_16BIT)
    _LOGGER.info("SegDecide Experiment: Wrote artifacts to %s", directory)
