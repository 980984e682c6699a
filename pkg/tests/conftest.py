from pathlib import Path

import numpy as np
import pytest

from discretize import GraphFunction, MeshParams, build_mesh
from graph import load_graph

GRAPHS_DIR = Path(__file__).parent.parent / "data" / "graphs"


def graph_file(name: str) -> Path:
    return GRAPHS_DIR / f"{name}.g"


def random_function(dg, rng, scale: float = 1.0, decay: float = 0.2) -> GraphFunction:
    """Smooth-ish random function, decaying along half-lines, zero on pinned nodes."""
    dofs = np.zeros(dg.n_dofs)
    for em in dg.edges:
        phase = rng.uniform(0.0, 2.0 * np.pi)
        freq = rng.uniform(0.5, 2.0)
        envelope = np.exp(-decay * em.x) if em.half_line else 1.0
        dofs[em.dofs] = scale * (1.0 + 0.5 * np.sin(freq * em.x + phase)) * envelope
    # vertex dofs end up with the value of the last incident edge
    dofs[~dg.free] = 0.0
    return GraphFunction(dg, dofs)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def line():
    return load_graph(graph_file("line"))


@pytest.fixture
def half_line():
    return load_graph(graph_file("half_line"))


@pytest.fixture
def star3():
    return load_graph(graph_file("star3"))


@pytest.fixture
def tadpole():
    return load_graph(graph_file("tadpole"))


@pytest.fixture
def example_a():
    return load_graph(graph_file("example_a"))


@pytest.fixture
def signpost():
    return load_graph(graph_file("signpost"))


@pytest.fixture
def line_mesh(line):
    return build_mesh(line, MeshParams(h=1e-3, L=20.0))


@pytest.fixture
def half_line_mesh(half_line):
    return build_mesh(half_line, MeshParams(h=1e-3, L=20.0))
