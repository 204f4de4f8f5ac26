import pytest

from imaginernn.world import WorldConfig, gen_dataset, load_dataset

SMALL_VIDEOS = {"train": 24, "val": 8, "test": 6}


@pytest.fixture(scope="session")
def small_world(tmp_path_factory):
    """A small default-style world shared by the harness, metrics and CLI tests."""
    root = tmp_path_factory.mktemp("small_world")
    manifest = gen_dataset(WorldConfig(videos=dict(SMALL_VIDEOS), seed=3), root)
    return root, manifest


@pytest.fixture(scope="session")
def small_dataset(small_world):
    return load_dataset(small_world[0])


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
