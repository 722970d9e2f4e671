import numpy as np
import pytest

from ctxwl.graph import ContextualGraph

UA, UU, UR = "user-aware", "user-unaware", "unresolved"


def fragment(ctx):
    # getLatitude -> writeBytes <- getLongitude
    return ContextualGraph.build(
        [(0, "getLatitude", [ctx]), (1, "getLongitude", [ctx]), (2, "writeBytes", [ctx])],
        [(0, 2), (1, 2)],
    )


@pytest.fixture
def geinimi():
    return fragment(UU)


@pytest.fixture
def yahoo():
    return fragment(UA)


def random_graph(rng, max_nodes=20, n_labels=5, contexts=(UA, UU, UR), p_edge=0.15, multi_ctx=True):
    n = int(rng.integers(1, max_nodes + 1))
    nodes = []
    for i in range(n):
        k = int(rng.integers(1, 3)) if multi_ctx else 1
        ctx = list(rng.choice(contexts, size=min(k, len(contexts)), replace=False))
        nodes.append((i, f"L{rng.integers(0, n_labels)}", ctx))
    edges = [(i, j) for i in range(n) for j in range(n) if i != j and rng.random() < p_edge]
    return ContextualGraph.build(nodes, edges)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
