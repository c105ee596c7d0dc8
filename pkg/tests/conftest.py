import numpy as np
import pytest

from pairedit import datagen as D
from pairedit.checks import random_adapter
from pairedit.netmodel import init_base
from pairedit.tensorcore import Rng
from pairedit.trainer import PretrainConfig, pretrain_base


@pytest.fixture
def small_base():
    return init_base(Rng(11), 4, (16, 16))


@pytest.fixture
def rand_adapter(small_base):
    return lambda seed, rank=2: random_adapter(Rng(seed), small_base, rank)


@pytest.fixture(scope="session")
def v1_base():
    """The seed-0 V1 base used by the reference runs (2000 steps, ~2 s)."""
    spec = D.SUITES["V1"]
    cfg = PretrainConfig(seed=0)
    return pretrain_base(D.make_pretrain_set(spec, cfg.n_samples, cfg.seed), cfg)


def assert_bitwise(a, b):
    a, b = np.asarray(a), np.asarray(b)
    assert a.shape == b.shape
    assert a.tobytes() == b.tobytes()


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one summary line per acceptance criterion."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])

    def record(number: int, ok: bool, detail: str) -> None:
        lines.append(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
