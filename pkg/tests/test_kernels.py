import numpy as np
import pytest
from hypothesis import given, strategies as st

from rgfwave import forward, kernels
from rgfwave.grid import build_grid

from conftest import small_scenario

cy = pytest.importorskip("rgfwave._kernels")
py = kernels.get_backend("python")[1]


def test_backend_selection():
    name, mod = kernels.get_backend()
    assert name in ("cython", "python")
    assert kernels.get_backend("cython")[1] is cy
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")


def test_history_sum_reference(rng):
    prof = rng.normal(size=(3, 7))
    row = np.array([0, 2, 1, 1])
    hist = rng.normal(size=(20, 4))
    step = 9
    ref = np.array([sum(prof[row[m], lag] * hist[step - lag, m] for lag in range(1, 7)) for m in range(4)])
    np.testing.assert_allclose(py.history_sum(prof, row, hist, step), ref, rtol=1e-13)
    np.testing.assert_allclose(cy.history_sum(prof, row, hist, step, 1), ref, rtol=1e-13)


@given(step=st.integers(0, 30), width=st.integers(1, 12), seed=st.integers(0, 2**16))
def test_history_sum_backends_agree(step, width, seed):
    rng = np.random.default_rng(seed)
    prof = rng.normal(size=(4, width))
    row = rng.integers(0, 4, size=5)
    hist = rng.normal(size=(31, 5))
    a = py.history_sum(prof, row, hist, step)
    b = cy.history_sum(prof, row, hist, step, 1)
    np.testing.assert_allclose(b, a, rtol=1e-12, atol=1e-14)
    assert np.array_equal(b, cy.history_sum(prof, row, hist, step, 3))


@pytest.mark.parametrize("name", ["point3", "dipole3"])
def test_retarded_eval_backends_agree(scenarios, name):
    g = build_grid(2.0, 5, 8)
    t = np.repeat(np.linspace(0.0, 60.0, 13), g.n_nodes)
    r = np.tile(g.points, (13, 1))
    for spec in scenarios[name].sources:
        codes, consts, off = forward.source_program(spec)
        dip = int(spec.kind == "dipole")
        a = py.retarded_eval(codes, consts, off, dip, t, r, 1.0, 1e-12, 100, 1)
        b = cy.retarded_eval(codes, consts, off, dip, t, r, 1.0, 1e-12, 100, 1)
        c = cy.retarded_eval(codes, consts, off, dip, t, r, 1.0, 1e-12, 100, 4)
        assert np.array_equal(a[2], b[2])
        np.testing.assert_allclose(b[0], a[0], rtol=1e-11, atol=1e-14)
        np.testing.assert_allclose(b[1], a[1], rtol=1e-11, atol=1e-14)
        assert all(np.array_equal(x, y) for x, y in zip(b, c))


def test_march_backends_agree():
    src = {"kind": "point", "px": "0.4*sin(0.3*t)", "py": "0.2", "pz": "-0.1*t/12", "q": "eta((t-1)/3)"}
    scn = small_scenario([src])
    a = forward.march_boundary_field(scn, backend="python").phi
    b = forward.march_boundary_field(scn, backend="cython").phi
    c = forward.march_boundary_field(scn, backend="cython", threads=4).phi
    np.testing.assert_allclose(b, a, rtol=1e-10, atol=1e-13 * np.max(np.abs(a)))
    assert np.array_equal(b, c)
