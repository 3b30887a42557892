import json
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent.parent / "src" / "worksheets" / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


def load_fixture_spec(name: str):
    from worksheets.spec import load_spec

    doc = json.loads((FIXTURES / name / "spec.json").read_text(encoding="utf-8"))
    return load_spec(doc)


@pytest.fixture(scope="session")
def restaurant_spec():
    return load_fixture_spec("restaurant")


@pytest.fixture(scope="session")
def banking_spec():
    return load_fixture_spec("banking")


@pytest.fixture(scope="session")
def course_spec():
    return load_fixture_spec("course")


@pytest.fixture(scope="session")
def ticket_spec():
    return load_fixture_spec("ticket")
