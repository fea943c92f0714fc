import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rcmdp.errors import ScenarioError
from rcmdp.scenario import (
    BUILDERS,
    FIXTURES,
    Scenario,
    dump_scenario,
    load_fixture,
    load_scenario,
    random_scenario,
    resolve_scenario_path,
)


@pytest.mark.parametrize("name", FIXTURES)
def test_shipped_fixture_matches_builder(name):
    assert load_fixture(name) == BUILDERS[name]()


@pytest.mark.parametrize("name", FIXTURES)
def test_round_trip_through_file(tmp_path, name):
    scen = load_fixture(name)
    path = tmp_path / f"{name}.json"
    dump_scenario(scen, path)
    again = load_scenario(str(path))
    assert again == scen
    assert again.reference == scen.reference
    assert again.to_document() == scen.to_document()


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6))
def test_random_scenarios_round_trip(seed):
    scen = random_scenario(seed)
    assert Scenario.from_document(json.loads(json.dumps(scen.to_document()))) == scen


def test_random_scenario_is_seeded():
    assert random_scenario(3) == random_scenario(3)
    assert random_scenario(3) != random_scenario(4)


@pytest.mark.parametrize("spec", ["squander_save", "fixtures/squander_save", "fixtures/squander_save.json"])
def test_fixture_references(spec):
    _, name = resolve_scenario_path(spec)
    assert name == "squander_save"


def test_path_without_extension(tmp_path):
    dump_scenario(load_fixture("trivial"), tmp_path / "mine.json")
    assert load_scenario(str(tmp_path / "mine")).name == "trivial"


def test_missing_file():
    with pytest.raises(FileNotFoundError):
        resolve_scenario_path("nowhere/nothing")


def test_invalid_json(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ScenarioError):
        load_scenario(str(bad))


def test_reference_block_validation():
    doc = load_fixture("squander_save").to_document()
    doc["reference"]["extra"] = 1
    with pytest.raises(ScenarioError):
        Scenario.from_document(doc)
    del doc["reference"]["extra"], doc["reference"]["value"]
    with pytest.raises(ScenarioError):
        Scenario.from_document(doc)


def test_risk_and_threshold_are_optional():
    doc = load_fixture("trivial").to_document()
    del doc["risk"], doc["r0"]
    scen = Scenario.from_document(doc)
    assert scen.r0 is None and scen.risk.label() == "E"


def test_squander_reference_content():
    ref = load_fixture("squander_save").reference
    assert ref.r0 == 0.3 and ref.value == -12.0 and dict(ref.policy) == {"win": "save", "lose": "save"}
