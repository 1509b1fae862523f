import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))  # for the oracles module

DOMAINS = ("layout", "layout-desk", "stroke")


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def triplets_equal(a, b) -> bool:
    """GroupTriplet equality (canvases are numpy arrays, so no dataclass ==)."""
    return (a.domain == b.domain and a.concept_id == b.concept_id
            and a.source == b.source and a.template == b.template
            and a.programs == b.programs
            and len(a.canvases) == len(b.canvases)
            and all((x == y).all() for x, y in zip(a.canvases, b.canvases)))
