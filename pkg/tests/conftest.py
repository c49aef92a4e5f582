import numpy as np
import pytest

from tapg.config import RunConfig
from tapg.synth import DatasetSpec, synth_generate
from tapg.tensor import set_precision
from tapg.train import train


@pytest.fixture(autouse=True)
def _f64():
    set_precision("f64")
    yield
    set_precision("f64")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def desk_videos():
    return synth_generate(DatasetSpec())


@pytest.fixture(scope="session")
def desk_run(desk_videos):
    """The default configuration trained for the full 200 epochs; shared."""
    import time

    t0 = time.perf_counter()
    res = train(RunConfig().validate(), [(v.seq, v.gt) for v in desk_videos])
    res.wall_time = time.perf_counter() - t0
    set_precision("f64")
    return res


@pytest.fixture(scope="session")
def ablated_run(desk_videos):
    res = train(RunConfig(global_branch="none").validate(), [(v.seq, v.gt) for v in desk_videos])
    set_precision("f64")
    return res


def small_config(**kw):
    base = dict(T=8, C=8, D=6, heads=2, num_samples=8, bnd_hidden=8, cmp_hidden_3d=8,
                cmp_hidden_2d=8, precision="f64", dropout=0.0)
    base.update(kw)
    return RunConfig(**base).validate()


# acceptance report: one line per criterion, printed at the end of the run

ACCEPTANCE_LINES: list = []


def record_criterion(name: str, ok: bool, detail: str = "") -> None:
    line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
