import os

import pytest
import torch
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

torch.set_num_threads(max(1, min(4, os.cpu_count() or 1)))


@pytest.fixture
def tiny_vision():
    from mofg.vision import VisionConfig

    return VisionConfig(image_size=16, patch_size=4, d_glo=16, d_loc=8, mixing_depth=1)


@pytest.fixture
def tiny_lm():
    from mofg.model import LMConfig

    return LMConfig(d_lm=16, n_layers=2, n_heads=2, d_ff=32, max_text_len=64)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        ok, detail = RESULTS[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
