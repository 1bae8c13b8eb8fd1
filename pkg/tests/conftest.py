import pytest

from bdcca.config import config_from_dict

TINY = {
    "stft": {"clip_seconds": 1.0},
    "data": {"synth": {"n_clips": 16, "n_labeled": 8, "event_rate": 2.0,
                       "active_fraction": 0.5, "event_duration": [0.05, 0.2]}},
    "dcca": {"n_components": 3, "channels": [4, 4, 4], "steps": 2, "batch_size": 4},
    "bootstrap": {"conv_channels": [2, 2, 2], "hidden": 4, "epochs": 1},
    "detector": {"conv_channels": [2, 2, 2], "hidden": 4, "epochs": 1},
    "binning": {"n_bins": 2, "min_bin_population": 2},
    "detection": {"threshold": 0.3},
    "augment": {"max_freq_width": 1, "max_time_width": 3},
    "eval": {"test_fraction": 0.25, "n_figures": 1},
}


@pytest.fixture
def tiny_dict(tmp_path):
    import copy

    values = copy.deepcopy(TINY)
    values["out"] = str(tmp_path / "out")
    return values


@pytest.fixture
def tiny(tiny_dict):
    return config_from_dict(tiny_dict)


ACCEPTANCE = []  # (criterion, passed, detail) filled by test_acceptance


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE:
        line = f"{'PASS' if passed else 'FAIL'}  {name}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))
