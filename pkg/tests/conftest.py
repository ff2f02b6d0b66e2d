import importlib.util

import numpy as np
import pytest


def shim_available() -> bool:
    return importlib.util.find_spec("evotune_shim") is not None


needs_shim = pytest.mark.skipif(not shim_available(), reason="candidate shim not installed")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_response(name: str, code: str, space: str, heading: str = "Space") -> str:
    return (
        f"# Name: {name}\n"
        f"# Code:\n```python\n{code}\n```\n"
        f"# {heading}:\n```python\n{space}\n```\n"
    )
