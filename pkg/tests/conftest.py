import numpy as np
import pytest

from geonav import _fallback
from geonav.geometry import Pose2
from geonav.worldmodel import GridMap2D, WorldScene

try:
    from geonav import _kernels
except ImportError:  # extension not built
    _kernels = None

BACKENDS = [_fallback] + ([_kernels] if _kernels is not None else [])


@pytest.fixture(params=BACKENDS, ids=lambda m: m.__name__.rsplit(".", 1)[-1])
def kernels(request):
    return request.param


def grid_from_obstacles(obst, resolution=0.04, origin=Pose2(0.0, 0.0, 0.0)):
    """Scene whose obstacle layer is exactly ``obst`` (1 = blocked) on flat ground."""
    obst = np.asarray(obst, dtype=np.float32)
    trav = GridMap2D(np.where(obst > 0, 1.0, 0.0).astype(np.float32), resolution, origin)
    return WorldScene.from_traversability(trav)


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance verdicts, one line per criterion, after the run."""
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
