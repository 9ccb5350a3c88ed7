import numpy as np
import pytest

from encaffine import MeasuredGraph


@pytest.fixture
def five_node_graph() -> MeasuredGraph:
    """The small-scale example graph: 5 nodes, 6 edges, uniform sigma = 0.5."""
    return MeasuredGraph(
        n=5,
        edges=((1, 2), (1, 3), (1, 4), (2, 3), (3, 5), (4, 5)),
        sigma=np.full(6, 0.5),
    )


@pytest.fixture
def single_edge_graph() -> MeasuredGraph:
    return MeasuredGraph(n=2, edges=((1, 2),), sigma=np.array([1.0]))
