import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pqclab import _pykernels, kernels
from pqclab.env import GridSpec, Task, sample_scene
from pqclab.planner import build_graph

ck = pytest.importorskip("pqclab._ckernels", reason="compiled kernels not built")


def test_backend_reported():
    assert kernels.BACKEND in ("cython", "python")


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), n_obs=st.integers(0, 6))
def test_dijkstra_backends_identical(seed, n_obs):
    sc = sample_scene(Task.PEG_INSERTION, GridSpec.desk(), n_obs, seed)
    graph = build_graph(sc)
    opp = sc.grid.opposite_actions
    src = np.flatnonzero(sc.goal_mask & graph.vertices).astype(np.int32)
    a = _pykernels.dijkstra(graph.nbr, graph.cost, opp, src)
    b = ck.dijkstra(graph.nbr, graph.cost, opp, src)
    assert np.array_equal(a, b)


@settings(max_examples=25, deadline=None)
@given(b=st.integers(1, 3), h=st.integers(3, 12), c=st.integers(1, 4), k=st.integers(1, 3),
       stride=st.integers(1, 3), seed=st.integers(0, 999))
def test_im2col_col2im_backends_identical(b, h, c, k, stride, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(b, h, h + 1, c))
    cols = _pykernels.im2col(x, k, stride)
    assert np.array_equal(cols, ck.im2col(x, k, stride))
    g = rng.normal(size=cols.shape)
    assert np.array_equal(_pykernels.col2im(g, x.shape, k, stride), ck.col2im(g, x.shape, k, stride))


def test_col2im_is_adjoint():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 7, 7, 3))
    cols = _pykernels.im2col(x, 3, 2)
    y = rng.normal(size=cols.shape)
    lhs = float((cols * y).sum())
    rhs = float((x * _pykernels.col2im(y, x.shape, 3, 2)).sum())
    assert lhs == pytest.approx(rhs, rel=1e-12)
