from __future__ import annotations

import os
import subprocess
import sys

import pytest
from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None)
settings.load_profile("default")

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


def run_tool(*args: str, cwd: str | None = None, timeout: float = 600) -> subprocess.CompletedProcess:
    """Runs the command line tool in a fresh interpreter."""
    return subprocess.run([sys.executable, "-m", "typesampler", *args], cwd=cwd, capture_output=True,
                          text=True, timeout=timeout)


@pytest.fixture
def fixtures_dir() -> str:
    return FIXTURES
