"""JSON configuration schemas and loaders."""

from __future__ import annotations

import json
import logging
import math
from pathlib import Path
from typing import Any

import voluptuous as vol

from .components import PostprocessConfig
from .const import (
    DEFAULT_BIN_EDGES,
    DEFAULT_CONNECTIVITY,
    DEFAULT_COST_CONSTANT,
    DEFAULT_CUTOFF,
    DEFAULT_KERNEL_RADIUS_SIGMAS,
    DEFAULT_MAX_GAP,
    DEFAULT_MIN_SIZE,
    DEFAULT_MIOU_BINS,
    DEFAULT_SIGMA,
    PRIOR_MODE_GLOBAL,
    PRIOR_MODE_LOCAL,
    SCENARIO_AGREEMENT,
    SCENARIO_CONFLICT,
)
from .exceptions import ConfigError, InvariantError
from .priors import PriorConfig
from .synth.experiment import ML_PRIORS_UNIFORM, ExperimentConfig
from .synth.scenario import ScenarioConfig
from .synth.scene import ClassSpec, SynthConfig

_LOGGER = logging.getLogger(__name__)

MAX_SEED = 2**64 - 1


def _bin_edge(value: Any) -> float:
    """Accept a number or the string ``"inf"``."""
    if isinstance(value, str) and value.strip().lower() in ("inf", "infinity"):
        return math.inf
    try:
        edge = float(value)
    except (TypeError, ValueError) as err:
        raise vol.Invalid(f"invalid bin edge {value!r}") from err
    if math.isnan(edge) or edge < 0:
        raise vol.Invalid(f"bin edge must be a non-negative number, got {value!r}")
    return edge


_NON_NEGATIVE_FLOAT = vol.All(vol.Coerce(float), vol.Range(min=0))
_POSITIVE_FLOAT = vol.All(vol.Coerce(float), vol.Range(min=0, min_included=False))
_SEED = vol.All(vol.Coerce(int), vol.Range(min=0, max=MAX_SEED))

PRIOR_CONFIG_SCHEMA = vol.Schema(
    {
        vol.Optional("sigma", default=DEFAULT_SIGMA): _NON_NEGATIVE_FLOAT,
        vol.Optional("cutoff", default=DEFAULT_CUTOFF): vol.All(
            vol.Coerce(float),
            vol.Range(min=0, max=1, min_included=False, max_included=False),
        ),
        vol.Optional(
            "kernel_radius_sigmas", default=DEFAULT_KERNEL_RADIUS_SIGMAS
        ): vol.All(vol.Coerce(float), vol.Range(min=1)),
    }
)

POSTPROCESS_CONFIG_SCHEMA = vol.Schema(
    {
        vol.Optional("connectivity", default=DEFAULT_CONNECTIVITY): vol.All(
            vol.Coerce(int), vol.In([4, 8])
        ),
        vol.Optional("min_size", default=DEFAULT_MIN_SIZE): vol.All(
            vol.Coerce(int), vol.Range(min=1)
        ),
        vol.Optional("max_gap", default=DEFAULT_MAX_GAP): vol.All(
            vol.Coerce(int), vol.Range(min=0)
        ),
    }
)

PLACEMENT_SCHEMA = vol.Schema(
    {
        vol.Optional("mean_row"): vol.Coerce(float),
        vol.Optional("mean_col"): vol.Coerce(float),
        vol.Optional("std_row"): _NON_NEGATIVE_FLOAT,
        vol.Optional("std_col"): _NON_NEGATIVE_FLOAT,
    }
)

CLASS_SCHEMA = vol.Schema(
    {
        vol.Required("id"): vol.All(vol.Coerce(int), vol.Range(min=0, max=255)),
        vol.Optional("name", default=""): str,
        vol.Required("feature_mean"): vol.Coerce(float),
        vol.Optional("feature_std", default=1.0): _POSITIVE_FLOAT,
        vol.Optional("count_mean", default=0.0): _NON_NEGATIVE_FLOAT,
        vol.Optional("size_min", default=1): vol.Coerce(int),
        vol.Optional("size_max", default=1): vol.Coerce(int),
        vol.Optional("placement", default=dict): PLACEMENT_SCHEMA,
    }
)

SYNTH_CONFIG_SCHEMA = vol.Schema(
    {
        vol.Required("height"): vol.All(vol.Coerce(int), vol.Range(min=1)),
        vol.Required("width"): vol.All(vol.Coerce(int), vol.Range(min=1)),
        vol.Optional("background_class", default=0): vol.All(
            vol.Coerce(int), vol.Range(min=0)
        ),
        vol.Optional("seed", default=0): _SEED,
        vol.Required("classes"): vol.All([CLASS_SCHEMA], vol.Length(min=2)),
    }
)

SCENARIO_CONFIG_SCHEMA = vol.Schema(
    {
        vol.Required("synth"): SYNTH_CONFIG_SCHEMA,
        vol.Required("rare_class"): vol.Coerce(int),
        vol.Required("confusable_class"): vol.Coerce(int),
        vol.Optional("object_height", default=6): vol.All(vol.Coerce(int), vol.Range(min=1)),
        vol.Optional("object_width", default=10): vol.All(vol.Coerce(int), vol.Range(min=1)),
        vol.Optional("train_images", default=100): vol.All(vol.Coerce(int), vol.Range(min=1)),
        vol.Optional("priors", default=dict): PRIOR_CONFIG_SCHEMA,
        vol.Optional("seed", default=0): _SEED,
        vol.Optional("placement", default=SCENARIO_CONFLICT): vol.In(
            [SCENARIO_CONFLICT, SCENARIO_AGREEMENT]
        ),
    }
)

EXPERIMENT_SCHEMA = vol.Schema(
    {
        vol.Required("train_images"): vol.All(vol.Coerce(int), vol.Range(min=0)),
        vol.Required("test_images"): vol.All(vol.Coerce(int), vol.Range(min=0)),
        vol.Required("focus_class"): vol.All(vol.Coerce(int), vol.Range(min=0)),
        vol.Optional("priors", default=dict): PRIOR_CONFIG_SCHEMA,
        vol.Optional("postprocess", default=dict): POSTPROCESS_CONFIG_SCHEMA,
        vol.Optional("bin_edges", default=lambda: list(DEFAULT_BIN_EDGES)): vol.All(
            [_bin_edge], vol.Length(min=2)
        ),
        vol.Optional("miou_bins", default=DEFAULT_MIOU_BINS): vol.All(
            vol.Coerce(int), vol.Range(min=1)
        ),
        vol.Optional("ml_priors", default=PRIOR_MODE_LOCAL): vol.In(
            [PRIOR_MODE_LOCAL, PRIOR_MODE_GLOBAL, ML_PRIORS_UNIFORM]
        ),
        vol.Optional("dropout_samples", default=0): vol.All(
            vol.Coerce(int), vol.Range(min=0)
        ),
        vol.Optional("dropout_noise_std", default=0.3): _NON_NEGATIVE_FLOAT,
        vol.Optional("cost_constant", default=DEFAULT_COST_CONSTANT): _POSITIVE_FLOAT,
        vol.Optional("seed"): _SEED,
    }
)

EXPERIMENT_CONFIG_SCHEMA = vol.Schema(
    {
        vol.Required("synth"): SYNTH_CONFIG_SCHEMA,
        vol.Required("experiment"): EXPERIMENT_SCHEMA,
        vol.Optional("scenario"): SCENARIO_CONFIG_SCHEMA,
    }
)


def _validate(schema: vol.Schema, data: Any, what: str) -> dict[str, Any]:
    try:
        return schema(data)
    except vol.Invalid as err:
        raise ConfigError(f"Invalid {what}: {err}") from err


def load_json(path: str | Path) -> Any:
    """Read a JSON file.

    Raises:
        ConfigError: If the file is not valid JSON.
    """
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: not valid JSON: {err}") from err


def prior_config_from_dict(data: dict[str, Any]) -> PriorConfig:
    values = _validate(PRIOR_CONFIG_SCHEMA, data, "prior config")
    try:
        return PriorConfig(**values)
    except InvariantError as err:
        raise ConfigError(f"Invalid prior config: {err}") from err


def postprocess_config_from_dict(data: dict[str, Any]) -> PostprocessConfig:
    return PostprocessConfig(**_validate(POSTPROCESS_CONFIG_SCHEMA, data, "postprocess config"))


def synth_config_from_dict(data: dict[str, Any]) -> SynthConfig:
    """Build a SynthConfig; missing placement values center objects in the image.

    Raises:
        ConfigError: On schema or cross-field violations.
        UnsatisfiableConfigError: If a size range cannot be met.
    """
    values = _validate(SYNTH_CONFIG_SCHEMA, data, "synth config")
    height, width = values["height"], values["width"]
    classes = []
    for spec in sorted(values["classes"], key=lambda item: item["id"]):
        placement = spec["placement"]
        classes.append(
            ClassSpec(
                class_id=spec["id"],
                name=spec["name"] or f"class_{spec['id']}",
                feature_mean=spec["feature_mean"],
                feature_std=spec["feature_std"],
                count_mean=spec["count_mean"],
                size_min=spec["size_min"],
                size_max=spec["size_max"],
                mean_row=placement.get("mean_row", (height - 1) / 2),
                mean_col=placement.get("mean_col", (width - 1) / 2),
                std_row=placement.get("std_row", height / 4),
                std_col=placement.get("std_col", width / 4),
            )
        )
    return SynthConfig(
        height=height,
        width=width,
        classes=tuple(classes),
        background_class=values["background_class"],
        seed=values["seed"],
    )


def scenario_config_from_dict(data: dict[str, Any]) -> ScenarioConfig:
    values = _validate(SCENARIO_CONFIG_SCHEMA, data, "scenario config")
    return ScenarioConfig(
        synth=synth_config_from_dict(values["synth"]),
        rare_class=values["rare_class"],
        confusable_class=values["confusable_class"],
        object_height=values["object_height"],
        object_width=values["object_width"],
        train_images=values["train_images"],
        priors=prior_config_from_dict(values["priors"]),
        seed=values["seed"],
        placement=values["placement"],
    )


def experiment_config_from_dict(data: dict[str, Any]) -> ExperimentConfig:
    """Build an ExperimentConfig from a ``{synth, experiment, scenario}`` document."""
    values = _validate(EXPERIMENT_CONFIG_SCHEMA, data, "experiment config")
    synth = synth_config_from_dict(values["synth"])
    experiment = values["experiment"]
    scenario = (
        scenario_config_from_dict(values["scenario"]) if "scenario" in values else None
    )
    return ExperimentConfig(
        synth=synth,
        train_images=experiment["train_images"],
        test_images=experiment["test_images"],
        focus_class=experiment["focus_class"],
        priors=prior_config_from_dict(experiment["priors"]),
        postprocess=postprocess_config_from_dict(experiment["postprocess"]),
        bin_edges=tuple(experiment["bin_edges"]),
        miou_bins=experiment["miou_bins"],
        ml_priors=experiment["ml_priors"],
        dropout_samples=experiment["dropout_samples"],
        dropout_noise_std=experiment["dropout_noise_std"],
        cost_constant=experiment["cost_constant"],
        seed=experiment.get("seed", synth.seed),
        scenario=scenario,
    )


def load_experiment_config(path: str | Path) -> ExperimentConfig:
    return experiment_config_from_dict(load_json(path))


def load_synth_config(path: str | Path) -> SynthConfig:
    """Load a SynthConfig from a bare synth document or one with a ``synth`` block."""
    data = load_json(path)
    if isinstance(data, dict) and "synth" in data:
        data = data["synth"]
    return synth_config_from_dict(data)


def load_scenario_config(path: str | Path) -> ScenarioConfig:
    """Load the ``scenario`` block of a document, or a bare scenario document."""
    data = load_json(path)
    if isinstance(data, dict) and "scenario" in data:
        data = data["scenario"]
    return scenario_config_from_dict(data)


def load_prior_config(path: str | Path) -> PriorConfig:
    """Load a PriorConfig, also from the ``experiment.priors`` block of a document."""
    data = load_json(path)
    if isinstance(data, dict) and "experiment" in data:
        data = data["experiment"].get("priors", {})
    return prior_config_from_dict(data)
