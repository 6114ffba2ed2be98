from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from posner.schemas.structure import Structure
from posner.services import generation_service, sample_service
from posner.storage import xyz

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def most_stable() -> Structure:
    """The 39-atom most-stable Ca9(PO4)6 structure."""
    return xyz.read_xyz(FIXTURES / "most_stable.xyz")


@pytest.fixture(scope="session")
def s6_structure() -> Structure:
    return generation_service.build_s6()


@pytest.fixture(scope="session")
def sample_run():
    """The shipped synthetic run; built once, it takes a few seconds."""
    return sample_service.build_sample_trajectory()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def runner() -> CliRunner:
    """Click runner with stdout and stderr kept apart."""
    return CliRunner(mix_stderr=False)
