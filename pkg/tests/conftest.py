from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gateau.chess import Position, apply_move

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_game(variant="chess", plies=40, seed=0) -> list[Position]:
    """Positions of a uniformly random game (stops early at game end)."""
    rng = np.random.default_rng(seed)
    p = Position.initial(variant)
    out = [p]
    for _ in range(plies):
        moves = p.legal_moves()
        if not moves:
            break
        p = apply_move(p, moves[int(rng.integers(len(moves)))])
        out.append(p)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def perturbed_net(config=None, seed: int = 0, scale: float = 0.3, dtype=np.float32):
    """A network with noise on every parameter, so heads are not flat."""
    from gateau.model import GateauNet, ModelConfig

    net = GateauNet(config or ModelConfig(hidden=8, blocks=1), seed=seed, dtype=dtype)
    noise = np.random.default_rng([seed, 99])
    for arr in net.params.values():
        arr += noise.normal(scale=scale, size=arr.shape).astype(arr.dtype)
    return net


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
