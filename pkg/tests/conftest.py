import pytest

from inca import bundled, bundled_path
from inca.netsim import Simulator, load_scenario, load_topology


@pytest.fixture(scope="session")
def poc_texts():
    return {name: bundled(name) for name in ("poc.topo", "poc.rules", "poc.scenario.json")}


@pytest.fixture(scope="session")
def poc_paths():
    return {name: bundled_path(name) for name in ("poc.topo", "poc.rules", "poc.scenario.json")}


@pytest.fixture(scope="session")
def poc_topology(poc_texts):
    return load_topology(poc_texts["poc.topo"])


def run_poc(texts, rules=None):
    topo = load_topology(texts["poc.topo"])
    injections = load_scenario(texts["poc.scenario.json"], topo)
    rules_text = texts["poc.rules"] if rules is None else rules
    return Simulator(topo, rules_text, injections).run()


@pytest.fixture(scope="session")
def poc_report(poc_texts):
    return run_poc(poc_texts)


@pytest.fixture(scope="session")
def poc_runner(poc_texts):
    """Run the PoC inputs, optionally with replacement rules text."""
    return lambda rules=None: run_poc(poc_texts, rules)
