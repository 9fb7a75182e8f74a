import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from alarm.phantom import PhantomSpec, Vessel, generate  # noqa: E402
from alarm.volgrid import Mask, Volume  # noqa: E402


def cube_mask(n, pad=2, spacing=(1.0, 1.0, 1.0)):
    a = np.zeros((n + 2 * pad,) * 3, dtype=bool)
    a[pad : pad + n, pad : pad + n, pad : pad + n] = True
    return Mask(a, spacing)


def liver_phantom(hu=55.0, dims=(120, 100, 90), axes=(45.0, 35.0, 30.0), vessel=False, **kw):
    vessels = []
    if vessel:
        c = [(n - 1) / 2 for n in dims]
        vessels = [Vessel((c[0], c[1], c[2] - axes[2]), (c[0], c[1], c[2] + axes[2]), 3.0, 100.0)]
    spec = PhantomSpec(dims=dims, liver_semi_axes_mm=axes, liver_hu=hu, vessels=vessels, **kw)
    return generate(spec)


@pytest.fixture
def phantom55():
    return liver_phantom(55.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def uniform_volume(value, dims, spacing=(1.0, 1.0, 1.0)):
    return Volume(np.full(dims, value, dtype=np.float32), spacing)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.VERDICTS:
            terminalreporter.write_line(line)
