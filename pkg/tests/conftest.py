import json
import pathlib

import pytest

import tabsplus
from tabsplus.graph import build_dag
from tabsplus.model import normalize, parse_bpmn
from tabsplus.sese import enumerate_candidates

FIXTURES = pathlib.Path(tabsplus.__file__).parent / "fixtures"
TRACES = FIXTURES / "traces"


def load_trace(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


@pytest.fixture(scope="session")
def supply_xml():
    return (FIXTURES / "supply_chain.bpmn").read_text()


@pytest.fixture(scope="session")
def trace_files():
    return sorted(TRACES.glob("t*.jsonl"))


@pytest.fixture(scope="session")
def trace01():
    return load_trace(TRACES / "t01.jsonl")


@pytest.fixture(scope="session")
def supply_model(supply_xml):
    return normalize(parse_bpmn(supply_xml, name="supply-chain"))


@pytest.fixture(scope="session")
def supply_dag(supply_model):
    return build_dag(supply_model)


@pytest.fixture(scope="session")
def supply_forest(supply_dag):
    return enumerate_candidates(supply_dag)
