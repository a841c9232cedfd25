import json
import random
from pathlib import Path

import pytest

from ie_forge.dataset import (
    EmptyDataset,
    Instance,
    SchemaError,
    TableParseError,
    dataset_statistics,
    load_instances,
    save_instances,
)
from ie_forge.tables import Table
from gen_utils import random_instance

DATA = Path(__file__).parent / "data"


def test_load_fixture():
    instances = load_instances(DATA / "instances_20.jsonl")
    assert len(instances) == 20
    assert all(inst.table is not None for inst in instances)


def test_fixture_statistics_match_hand_tally():
    instances = load_instances(DATA / "instances_20.jsonl")
    expected = json.loads((DATA / "expected_stats.json").read_text())
    report = dataset_statistics(instances).to_dict()
    assert report["difficulty_counts"] == expected["difficulty_counts"]
    for key, value in expected.items():
        if key == "difficulty_counts":
            continue
        if isinstance(value, float):
            assert report[key] == pytest.approx(value, abs=1e-9), key
        else:
            assert report[key] == value, key


def test_roundtrip_randomized(tmp_path):
    rng = random.Random(20240818)
    instances = [random_instance(rng, i) for i in range(300)]
    path = tmp_path / "x.jsonl"
    save_instances(instances, path)
    assert load_instances(path) == instances


def test_save_empty_and_missing_field(tmp_path):
    path = tmp_path / "e.jsonl"
    save_instances([], path)
    assert path.read_text() == ""
    assert load_instances(path) == []

    bad = tmp_path / "bad.jsonl"
    rec = {"id": "a", "text": "t", "domain": "d", "category": "open",
           "source_type": "retrieve", "variant": "direct", "table": None}
    bad.write_text(json.dumps(rec) + "\n")
    with pytest.raises(SchemaError) as err:
        load_instances(bad)
    assert err.value.line == 1
    assert "instruction" in str(err.value)


def test_schema_error_line_number(tmp_path):
    good = {"id": "a", "instruction": "i", "text": "t", "domain": "d",
            "category": "open", "source_type": "retrieve", "variant": "direct",
            "table": None}
    bad = dict(good, category="bogus", id="b")
    path = tmp_path / "mix.jsonl"
    path.write_text(json.dumps(good) + "\n" + json.dumps(bad) + "\n")
    with pytest.raises(SchemaError) as err:
        load_instances(path)
    assert err.value.line == 2


def test_table_parse_error_carries_id(tmp_path):
    rec = {"id": "broken-1", "instruction": "i", "text": "t", "domain": "d",
           "category": "open", "source_type": "retrieve", "variant": "direct",
           "table": "not a table at all"}
    path = tmp_path / "t.jsonl"
    path.write_text(json.dumps(rec) + "\n")
    with pytest.raises(TableParseError) as err:
        load_instances(path)
    assert err.value.instance_id == "broken-1"


def test_explanation_requires_cot():
    with pytest.raises(ValueError):
        Instance(
            id="x", instruction="i", text="t", table=None, domain="d",
            category="open", source_type="retrieve", variant="direct",
            explanation="nope",
        )


def test_statistics_empty_raises():
    with pytest.raises(EmptyDataset):
        dataset_statistics([])


def test_single_instance_average():
    inst = Instance(
        id="x", instruction="one two three four five", text="a b c",
        table=Table(header=["h"], rows=[["v"]]), domain="d",
        category="fixed", source_type="retrieve", variant="direct",
    )
    report = dataset_statistics([inst])
    assert report.avg_instruction_words == 5.0
    assert report.n_texts == 1
    assert report.avg_table_cells == 1.0
    assert report.difficulty_counts == {}


def test_statistics_identities_on_random_sets():
    rng = random.Random(77)
    instances = [random_instance(rng, i) for i in range(120)]
    report = dataset_statistics(instances)
    assert report.n_open + report.n_fixed == report.n_instructions
    assert report.n_retrieved + report.n_generated == report.n_texts
    assert sum(report.difficulty_counts.values()) == sum(
        1 for i in instances if i.difficulty is not None
    )


def test_shared_text_counted_once():
    shared = "the same backing text for two instructions"
    a = Instance(id="a", instruction="x y", text=shared, table=None,
                 domain="d1", category="fixed", source_type="retrieve",
                 variant="direct")
    b = Instance(id="b", instruction="z w", text=shared, table=None,
                 domain="d2", category="open", source_type="retrieve",
                 variant="direct")
    report = dataset_statistics([a, b])
    assert report.n_instructions == 2
    assert report.n_texts == 1
    assert report.n_retrieved == 1


def test_render_text_mentions_counts():
    instances = load_instances(DATA / "instances_20.jsonl")
    text = dataset_statistics(instances).render_text()
    assert "# Instruction        20" in text
    assert "# Domain             20" in text
