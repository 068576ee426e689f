from pathlib import Path

import pytest

from sqlsteps.corpus import read_seed_file
from sqlsteps.evaluate import load_fixture_dbs
from sqlsteps.schema import load_schema_dir

FIXTURES = Path(__file__).parent / "fixtures"


def golden(name: str) -> str:
    return (FIXTURES / "golden" / name).read_text(encoding="utf-8")


@pytest.fixture(scope="session")
def schemas():
    return load_schema_dir(FIXTURES / "schemas")


@pytest.fixture(scope="session")
def schools(schemas):
    return schemas["schools"]


@pytest.fixture(scope="session")
def store(schemas):
    return schemas["store"]


@pytest.fixture(scope="session")
def dbs():
    return load_fixture_dbs(FIXTURES / "dbs")


@pytest.fixture(scope="session")
def fixture_seeds():
    return read_seed_file(FIXTURES / "seeds" / "fixture_seeds.jsonl")
