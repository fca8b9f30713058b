from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ladder_rpki.publisher import PublicationPoint  # noqa: E402


class FixedClock:
    def __init__(self, start: int = 1_000_000) -> None:
        self.now = start

    def __call__(self) -> float:
        return self.now

    def advance(self, seconds: float = 1) -> None:
        self.now += seconds


@pytest.fixture
def clock() -> FixedClock:
    return FixedClock()


@pytest.fixture
def point(tmp_path, clock) -> PublicationPoint:
    """Registry with two hosted CAs and one delegated CA, all published."""
    pp = PublicationPoint.create(tmp_path / "repo", "registry", seed=b"anchor", clock=clock)
    for ca_id, mode, count in (("alpha", "hosted", 14), ("beta", "hosted", 5), ("gamma", "delegated", 3)):
        ca = pp.init_ca(ca_id, mode, seed=ca_id.encode())
        for i in range(count):
            ca.issue_object(f"{ca_id}-{i}.roa", f"{ca_id} object {i}".encode())
    pp.publish_all()
    return pp


def anchor_of(pp: PublicationPoint) -> tuple[str, bytes]:
    return pp.registry.trust_anchor.scheme.name, pp.trust_anchor


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    setattr(item, f"rep_{report.when}", report)
