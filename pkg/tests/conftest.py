from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from orsim.core import BBox, Embedding, GalleryItem
from orsim.dataset import save_dataset
from orsim.synth import SynthConfig, generate

DATA = Path(__file__).parent / "data"

# filled by test_acceptance, echoed at the end of the run
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def item(item_id, frame_id, vec, det=1.0, person=None, bbox=(0.0, 0.0, 10.0, 20.0)):
    return GalleryItem(item_id, frame_id, BBox(*bbox), det, Embedding(np.asarray(vec, dtype=np.float64)), person)


@pytest.fixture
def make_item():
    return item


@pytest.fixture(scope="session")
def golden_dir() -> Path:
    return DATA / "golden"


@pytest.fixture(scope="session")
def small_config() -> SynthConfig:
    return SynthConfig(num_identities=40, embedding_dim=16, frames_per_identity=3, seed=11)


@pytest.fixture(scope="session")
def small_ds(small_config):
    return generate(small_config)


@pytest.fixture(scope="session")
def small_dir(small_ds, tmp_path_factory) -> Path:
    return save_dataset(small_ds, tmp_path_factory.mktemp("small") / "ds")


@pytest.fixture(scope="session")
def default_ds():
    return generate(SynthConfig())
