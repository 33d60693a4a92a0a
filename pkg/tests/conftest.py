import numpy as np
import pytest

from tactisense.sim.dataset import generate_dataset, load_dataset

# a handful of 4 s clips: enough ticks to trim (80 + 10) and fill an RNN window
TINY_COUNTS = {
    "train": {"C": 1, "R2": 1},
    "val": {"C": 1},
    "test_seen": {"C": 1, "Z2": 1},
    "test_unseen": {"unseen_material": 1, "L1": 1},
}
TINY_SECONDS = 4.0


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny") / "data"
    generate_dataset(root, seed=11, preset="desk", clip_seconds=TINY_SECONDS, counts=TINY_COUNTS)
    return root


@pytest.fixture(scope="session")
def tiny_dataset(tiny_data):
    return load_dataset(tiny_data, load_frames=True)


# -- acceptance verdicts, echoed once at the end of the run -------------------------
_VERDICTS: dict[int, str] = {}


@pytest.fixture
def verdict():
    def record(number: int, ok: bool, detail: str) -> bool:
        _VERDICTS[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance")
        for k in sorted(_VERDICTS):
            terminalreporter.write_line(_VERDICTS[k])
