from __future__ import annotations

import numpy as np
import pytest

from streamway.airspace import Layer
from streamway.corridors import CorridorSet, Streamline


def straight_set(layer_index: int, altitude: float, lines: list[np.ndarray], axis: str | None = None,
                 direction: int = 1) -> CorridorSet:
    """Corridor set whose waypoints are given explicitly (one (K, 2) array per streamline)."""
    axis = axis or ("x" if layer_index % 2 == 1 else "y")
    layer = Layer(layer_index, altitude, axis, direction)
    streamlines = [Streamline(float(i + 1), np.asarray(w, float), layer_index, i) for i, w in enumerate(lines)]
    return CorridorSet(layer, streamlines, [np.asarray(w, float) for w in lines])


def hline(y: float, n: int, spacing: float = 10.0, x0: float = 0.0) -> np.ndarray:
    return np.column_stack([x0 + spacing * np.arange(n), np.full(n, y)])


def vline(x: float, n: int, spacing: float = 10.0, y0: float = 0.0) -> np.ndarray:
    return np.column_stack([np.full(n, x), y0 + spacing * np.arange(n)])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
