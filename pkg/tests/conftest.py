import sys
from pathlib import Path

import pytest

from setsdb.cloud import load_fixture, ontology_document, scripted_fixture
from setsdb.ontology import load_ontology
from setsdb.system import System

# lets tests import the fixture regeneration script directly
sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "scripts"))


@pytest.fixture(scope="session")
def onts():
    return load_ontology(ontology_document())


@pytest.fixture()
def scripted():
    return scripted_fixture()


@pytest.fixture()
def scripted_system(scripted):
    system = System()
    load_fixture(system, scripted)
    return system
