import pytest

from classbd.experiment import default_config

TINY_MODEL = {
    "channels": 4,
    "kernel_size": 8,
    "wdcnn": {"first_kernel": 16, "first_stride": 4, "stage_channels": [4, 8], "fc_width": 8},
}


@pytest.fixture
def tiny_cfg(tmp_path):
    """Four classes of 256-sample segments and a model small enough for seconds-long runs."""
    return default_config(
        dataset={"segment_length": 256, "record_length": 256 * 12, "stride": 256},
        noise={"snr_db": [-2.0]},
        model=TINY_MODEL,
        training={"batch_size": 8, "max_epochs": 3, "learning_rate": 0.05},
        output={"directory": str(tmp_path / "out"), "checkpoint_every": 1},
    )


_CRITERIA: dict[int, str] = {}


def record_criterion(number: int, name: str, passed: bool, detail: str) -> None:
    """Keep one pass/fail line per acceptance criterion for the terminal summary."""
    _CRITERIA[number] = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {name}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[number])
