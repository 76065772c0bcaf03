import os
import time

import numpy as np
import pytest
import torch

from hsidiff.cli import main as cli_main
from hsidiff.cli import make_synthetic
from hsidiff.hsio import LabeledCube

# one acceptance line per criterion, collected here and printed at session end
ACCEPTANCE_LINES = []

torch.set_num_threads(max(1, min(4, os.cpu_count() or 1)))


def record_criterion(number: int, title: str, ok: bool, detail: str = ""):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title}" + (f" -- {detail}" if detail else "")
    ACCEPTANCE_LINES.append((number, line))
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE_LINES, key=lambda x: x[0]):
        terminalreporter.write_line(line)


def ramp_cube(H=6, W=5, B=3, n_classes=3, seed=0) -> LabeledCube:
    rng = np.random.default_rng(seed)
    data = rng.random((H, W, B)).astype(np.float32)
    labels = rng.integers(0, n_classes + 1, size=(H, W))
    return LabeledCube(data, labels, [f"c{i}" for i in range(1, n_classes + 1)], "ramp")


@pytest.fixture
def small_cube():
    return ramp_cube()


class SyntheticRun:
    """The acceptance run: make-synthetic then run-all, timed."""

    def __init__(self, root):
        self.root = root
        self.paths = make_synthetic(root, seed=0)
        self.config = self.paths["config"]
        self.out = root / "runs" / "synthetic"
        t0 = time.perf_counter()
        self.exit_code = cli_main(["run-all", "--config", str(self.config)])
        self.seconds = time.perf_counter() - t0
        self._ablation = None

    def ablation(self):
        if self._ablation is None:
            t0 = time.perf_counter()
            code = cli_main(["ablate", "--config", str(self.config)])
            self._ablation = (code, time.perf_counter() - t0)
        return self._ablation


@pytest.fixture(scope="session")
def synthetic_run(tmp_path_factory):
    return SyntheticRun(tmp_path_factory.mktemp("synthetic"))


@pytest.fixture(scope="session")
def synthetic_rerun(tmp_path_factory, synthetic_run):
    """A second, independent run-all of the same config and seed."""
    out = tmp_path_factory.mktemp("synthetic_rerun")
    code = cli_main(["run-all", "--config", str(synthetic_run.config), "--out", str(out)])
    return code, out
