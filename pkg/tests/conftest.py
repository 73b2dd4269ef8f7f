import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def tiny_arch():
    from rntforge.nn.arch import RnntConfig
    return RnntConfig(input_dim=6, enc_layers=2, enc_hidden=5, enc_proj=4, pred_layers=1, pred_hidden=4,
                      pred_proj=3, embed_dim=3, joint_dim=5)


def pytest_terminal_summary(terminalreporter):
    import test_acceptance
    if not test_acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n, (ok, detail) in sorted(test_acceptance.RESULTS.items()):
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
