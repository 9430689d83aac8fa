"""Shared helpers: build a program from source text and run it on one DPU."""

from __future__ import annotations

import pytest

from pimsim.config import RunConfig
from pimsim.core import Dpu, PipelineConfig
from pimsim.frontend import build


def make_dpu(source: str, threads: int = 1, config: RunConfig | None = None, log: bool = False,
             **pipeline) -> Dpu:
    """Link ``source``, load it into a fresh DPU and boot ``threads`` tasklets."""
    config = config or RunConfig()
    kwargs = config.dpu_kwargs()
    if pipeline:
        base = kwargs["config"]
        kwargs["config"] = PipelineConfig(**{**base.__dict__, **pipeline})
    dpu = Dpu(**kwargs)
    dpu.load(build(source, layout=config.address_map()))
    if log:
        dpu.issue_log = []
    dpu.boot(threads)
    return dpu


def run_source(source: str, threads: int = 1, config: RunConfig | None = None, log: bool = False,
               **pipeline):
    dpu = make_dpu(source, threads, config, log, **pipeline)
    stats = dpu.run(2_000_000)
    return dpu, stats


def alu_program(n: int) -> str:
    """``n`` independent ALU instructions (distinct destinations, no same-parity reads), then stop."""
    body = [f"add r{1 + 2 * (i % 8)}, r{2 + 2 * (i % 8)}, {i}" for i in range(n - 1)]
    return "\n".join(body + ["stop"])


# one line per acceptance criterion, echoed at the end of the session
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)


@pytest.fixture
def default_config() -> RunConfig:
    return RunConfig()
