"""Tests for the global-versus-local prior scenario."""

from pathlib import Path

import numpy as np
import pytest

from segdecide.config import scenario_config_from_dict
from segdecide.const import SCENARIO_AGREEMENT, SCENARIO_CONFLICT
from segdecide.exceptions import ConfigError, ScenarioError
from segdecide.synth.scenario import (
    ScenarioConfig,
    choose_location,
    global_vs_local_scenario,
    object_recall,
    write_scenario_masks,
)

from tests.conftest import MOCK_SCENARIO_CONFIG_DATA, label_map, make_synth_config


def _scenario(placement: str) -> ScenarioConfig:
    return scenario_config_from_dict({**MOCK_SCENARIO_CONFIG_DATA, "placement": placement})


def test_choose_location_prefers_the_highest_mean_score():
    region = np.ones((4, 5), dtype=bool)
    score = np.zeros((4, 5))
    score[2:4, 3:5] = 1.0
    assert choose_location(region, score, 2, 2) == (2, 3)


def test_choose_location_breaks_ties_in_raster_order():
    region = np.zeros((4, 5), dtype=bool)
    region[1:3, :] = True
    assert choose_location(region, np.ones((4, 5)), 2, 2) == (1, 0)


def test_choose_location_needs_a_fitting_window():
    region = np.zeros((4, 5), dtype=bool)
    region[0, :] = True
    with pytest.raises(ScenarioError):
        choose_location(region, np.ones((4, 5)), 2, 2)
    with pytest.raises(ScenarioError):
        choose_location(region, np.ones((4, 5)), 5, 1)


def test_object_recall():
    pred = label_map([[1, 1, 0], [2, 1, 0]])
    mask = np.array([[True, True, False], [True, True, False]])
    assert object_recall(pred, mask, 1) == pytest.approx(0.75)
    with pytest.raises(ScenarioError):
        object_recall(pred, np.zeros((2, 3), dtype=bool), 1)


def test_scenario_config_validation():
    synth = make_synth_config()
    with pytest.raises(ConfigError):
        ScenarioConfig(synth, rare_class=1, confusable_class=1)
    with pytest.raises(ConfigError):
        ScenarioConfig(synth, rare_class=0, confusable_class=2)
    with pytest.raises(ConfigError):
        ScenarioConfig(synth, rare_class=1, confusable_class=2, object_height=99)
    with pytest.raises(ConfigError):
        ScenarioConfig(synth, rare_class=1, confusable_class=2, placement="sideways")


def test_conflict_placement_hides_the_object_from_global_priors():
    config = _scenario(SCENARIO_CONFLICT)
    result = global_vs_local_scenario(config)
    assert result.object_mask.sum() == 15
    assert not (result.object_mask & ~result.region).any()
    expected_region = result.rare_sets.mask_gt & result.confusable_sets.mask_leq
    assert np.array_equal(result.region, expected_region)
    assert result.recall_global == 0.0
    assert result.recall_local > 0.5
    assert result.passed
    summary = result.to_json()
    assert summary["detected"] == {"global": False, "local": True}
    assert summary["object_size"] == 15


def test_agreement_placement_is_found_by_both():
    result = global_vs_local_scenario(_scenario(SCENARIO_AGREEMENT))
    expected_region = result.rare_sets.mask_leq & result.confusable_sets.mask_gt
    assert np.array_equal(result.region, expected_region)
    assert result.recall_global > 0
    assert result.recall_local > 0
    assert result.passed


def test_scenario_is_deterministic():
    config = _scenario(SCENARIO_CONFLICT)
    first = global_vs_local_scenario(config)
    second = global_vs_local_scenario(config)
    assert first.location == second.location
    assert np.array_equal(first.ml_local.data, second.ml_local.data)


def test_write_scenario_masks(out_dir: Path):
    result = global_vs_local_scenario(_scenario(SCENARIO_CONFLICT))
    paths = write_scenario_masks(result, out_dir)
    assert sorted(path.name for path in paths) == [
        "scenario_B_1.pgm",
        "scenario_B_2.pgm",
        "scenario_B_prime_1.pgm",
        "scenario_B_prime_2.pgm",
        "scenario_object.pgm",
        "scenario_region.pgm",
    ]
    assert all(path.is_file() for path in paths)
