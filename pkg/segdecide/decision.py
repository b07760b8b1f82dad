"""Bayes and Maximum-Likelihood decision rules, dropout averaging and costs."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
from enum import Enum
import logging
from typing import TYPE_CHECKING, Union

import numpy as np

from .const import DEFAULT_COST_CONSTANT, PRIOR_MODE_GLOBAL, PRIOR_MODE_LOCAL
from .exceptions import EmptyInputError, InvariantError, ShapeMismatchError
from .tensor_io import GlobalPriors, LabelMap, PriorStack, ProbabilityMap

if TYPE_CHECKING:
    from .metrics import ConfusionMatrix

_LOGGER = logging.getLogger(__name__)

Priors = Union[PriorStack, GlobalPriors]


class RuleKind(str, Enum):
    """Decision rule selector."""

    BAYES = "bayes"
    MAXIMUM_LIKELIHOOD = "ml"


class CostKind(str, Enum):
    """Cost function selector."""

    SYMMETRIC = "symmetric"
    INVERSE_PROPORTIONAL = "inverse_proportional"


class CostWeighting(str, Enum):
    """Which class prior an inverse-proportional error cost divides by."""

    PREDICTED = "predicted"
    TRUE = "true"


@dataclass(frozen=True)
class DecisionRule:
    """A decision rule and, for ML, the priors it divides by.

    Attributes:
        kind: Bayes (argmax posterior) or ML (argmax posterior / prior).
        priors: Pixel-wise stack in local mode, scalar priors in global mode.
        prior_mode: ``local`` or ``global``.
    """

    kind: RuleKind = RuleKind.BAYES
    priors: Priors | None = None
    prior_mode: str = PRIOR_MODE_LOCAL

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", RuleKind(self.kind))
        if self.prior_mode not in (PRIOR_MODE_LOCAL, PRIOR_MODE_GLOBAL):
            raise InvariantError(f"Unknown prior mode {self.prior_mode!r}")
        if self.kind is RuleKind.BAYES:
            return
        if self.priors is None:
            raise InvariantError("The ML rule needs priors")
        if self.prior_mode == PRIOR_MODE_LOCAL and not isinstance(
            self.priors, PriorStack
        ):
            raise InvariantError("Local prior mode needs a PriorStack")
        if self.prior_mode == PRIOR_MODE_GLOBAL and not isinstance(
            self.priors, GlobalPriors
        ):
            raise InvariantError("Global prior mode needs GlobalPriors")
        values = (
            self.priors.data if isinstance(self.priors, PriorStack) else self.priors.values
        )
        if (values <= 0).any():
            raise InvariantError("ML priors must be strictly positive; apply a cutoff")

    @classmethod
    def bayes(cls) -> DecisionRule:
        return cls(RuleKind.BAYES)

    @classmethod
    def maximum_likelihood(cls, priors: Priors) -> DecisionRule:
        mode = PRIOR_MODE_LOCAL if isinstance(priors, PriorStack) else PRIOR_MODE_GLOBAL
        return cls(RuleKind.MAXIMUM_LIKELIHOOD, priors, mode)


@dataclass(frozen=True)
class CostModel:
    """Cost of a misclassification; correct decisions cost nothing.

    Attributes:
        kind: Symmetric (constant C) or inverse proportional (C / prior).
        constant: The positive constant C.
        priors: Scalar or pixel-wise priors, required for inverse costs.
        weight_by: Divide by the prior of the predicted or of the true class.
    """

    kind: CostKind = CostKind.SYMMETRIC
    constant: float = DEFAULT_COST_CONSTANT
    priors: Priors | None = None
    weight_by: CostWeighting = CostWeighting.PREDICTED

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", CostKind(self.kind))
        object.__setattr__(self, "weight_by", CostWeighting(self.weight_by))
        if self.constant <= 0:
            raise InvariantError(f"Cost constant must be > 0, got {self.constant}")
        if self.kind is CostKind.INVERSE_PROPORTIONAL:
            if self.priors is None:
                raise InvariantError("Inverse-proportional costs need priors")
            values = (
                self.priors.data
                if isinstance(self.priors, PriorStack)
                else self.priors.values
            )
            if (values <= 0).any():
                raise InvariantError("Cost priors must be strictly positive")


@dataclass(frozen=True)
class PixelCost:
    """Per-pixel misclassification cost of one prediction."""

    per_pixel: np.ndarray
    mean: float
    total: float


def decide_bayes(probs: ProbabilityMap) -> LabelMap:
    """Pick the class with the largest posterior; ties go to the smaller id."""
    # np.argmax returns the first maximum, i.e. the smallest class id.
    labels = np.argmax(probs.data, axis=2).astype(np.uint8)
    return LabelMap(labels, probs.num_classes)


def _prior_array(rule: DecisionRule, probs: ProbabilityMap) -> np.ndarray:
    """Return priors broadcastable against ``probs.data`` in float64."""
    priors = rule.priors
    if isinstance(priors, PriorStack):
        if priors.data.shape != probs.data.shape:
            raise ShapeMismatchError(
                f"Prior stack shape {priors.data.shape} does not match "
                f"probability map shape {probs.data.shape}"
            )
        return priors.data.astype(np.float64)
    assert priors is not None
    if priors.num_classes != probs.num_classes:
        raise ShapeMismatchError(
            f"{priors.num_classes} global priors for {probs.num_classes} classes"
        )
    return priors.values.reshape(1, 1, -1)


def decide_ml(probs: ProbabilityMap, rule: DecisionRule) -> LabelMap:
    """Pick the class with the largest ratio posterior / prior.

    Ratios are computed in float64; ties go to the smaller class id.

    Raises:
        InvariantError: If ``rule`` is not an ML rule.
        ShapeMismatchError: If the priors do not match the map.
    """
    if rule.kind is not RuleKind.MAXIMUM_LIKELIHOOD:
        raise InvariantError("decide_ml needs a maximum-likelihood rule")
    ratios = probs.data.astype(np.float64) / _prior_array(rule, probs)
    labels = np.argmax(ratios, axis=2).astype(np.uint8)
    return LabelMap(labels, probs.num_classes)


def decide(probs: ProbabilityMap, rule: DecisionRule) -> LabelMap:
    """Apply ``rule`` to a probability map."""
    if rule.kind is RuleKind.BAYES:
        return decide_bayes(probs)
    return decide_ml(probs, rule)


def average_probability_maps(maps: Sequence[ProbabilityMap]) -> ProbabilityMap:
    """Average several stochastic softmax outputs elementwise.

    Raises:
        EmptyInputError: If ``maps`` is empty.
        ShapeMismatchError: If the maps differ in shape.
    """
    if len(maps) == 0:
        raise EmptyInputError("Nothing to average: no probability maps given")
    shape = maps[0].data.shape
    total = np.zeros(shape, dtype=np.float64)
    for index, prob_map in enumerate(maps):
        if prob_map.data.shape != shape:
            raise ShapeMismatchError(
                f"Probability map {index} has shape {prob_map.data.shape}, "
                f"expected {shape}",
                index=index,
            )
        total += prob_map.data
    if len(maps) > 1:
        _LOGGER.debug("SegDecide Decision: Averaged %d probability maps", len(maps))
    return ProbabilityMap((total / len(maps)).astype(np.float32))


def _cost_weights(model: CostModel, num_classes: int) -> np.ndarray:
    """Return the N×N matrix W[k][k̂] of error costs (zero diagonal)."""
    if model.kind is CostKind.SYMMETRIC:
        weights = np.full((num_classes, num_classes), model.constant)
    else:
        if not isinstance(model.priors, GlobalPriors):
            raise InvariantError(
                "expected_cost needs scalar priors; use pixel_cost for pixel-wise priors"
            )
        if model.priors.num_classes != num_classes:
            raise ShapeMismatchError(
                f"{model.priors.num_classes} cost priors for {num_classes} classes"
            )
        inverse = model.constant / model.priors.values
        if model.weight_by is CostWeighting.PREDICTED:
            weights = np.tile(inverse, (num_classes, 1))
        else:
            weights = np.tile(inverse.reshape(-1, 1), (1, num_classes))
    np.fill_diagonal(weights, 0.0)
    return weights


def expected_cost(confusion: ConfusionMatrix, model: CostModel) -> float:
    """Return the empirical mean cost per pixel of a confusion matrix.

    Args:
        confusion: Counts A[k][k̂] of true class k predicted as k̂.
        model: The cost function.

    Raises:
        EmptyInputError: If the matrix counts no pixels.
    """
    counts = confusion.counts.astype(np.float64)
    total = counts.sum()
    if total == 0:
        raise EmptyInputError("Confusion matrix is empty")
    weights = _cost_weights(model, counts.shape[0])
    return float((counts * weights).sum() / total)


def pixel_cost(pred: LabelMap, gt: LabelMap, model: CostModel) -> PixelCost:
    """Evaluate a cost model pixel by pixel, with scalar or pixel-wise priors.

    Raises:
        ShapeMismatchError: If the maps or priors disagree in shape.
        InvariantError: If the maps have no pixels.
    """
    if pred.shape != gt.shape:
        raise ShapeMismatchError(f"Prediction {pred.shape} vs ground truth {gt.shape}")
    if pred.data.size == 0:
        raise InvariantError(f"Cannot average a cost over an empty {pred.shape} map")
    errors = pred.data != gt.data
    if model.kind is CostKind.SYMMETRIC:
        per_pixel = np.where(errors, model.constant, 0.0)
    else:
        charged = pred.data if model.weight_by is CostWeighting.PREDICTED else gt.data
        priors = model.priors
        if isinstance(priors, PriorStack):
            if priors.shape != pred.shape:
                raise ShapeMismatchError(
                    f"Prior stack {priors.shape} vs prediction {pred.shape}"
                )
            rows, cols = np.indices(pred.shape)
            prior_at = priors.data[rows, cols, charged].astype(np.float64)
        else:
            assert priors is not None
            prior_at = priors.values[charged]
        per_pixel = np.where(errors, model.constant / prior_at, 0.0)
    total = float(per_pixel.sum())
    return PixelCost(per_pixel=per_pixel, mean=total / per_pixel.size, total=total)
