import pytest

from cevt.data import SyntheticConfig, generate_synthetic


@pytest.fixture(scope="session")
def small_synthetic():
    """A quick 3-known / 2-unknown problem for training tests."""
    cfg = SyntheticConfig(c_known=3, c_unknown=2, dim=8, per_class_source=40,
                          per_class_target=40, frames_per_video=2, seed=0)
    return generate_synthetic(cfg)


def pytest_terminal_summary(terminalreporter):
    from tests import acceptance_log

    if acceptance_log.LINES:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_log.LINES:
            terminalreporter.write_line(line)
