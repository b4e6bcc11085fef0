import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffsurv import _pykernels as py
from diffsurv import kernels

try:
    from diffsurv import _ckernels as cy
except ImportError:  # pragma: no cover - exercised only without a compiler
    cy = None

needs_cython = pytest.mark.skipif(cy is None, reason="compiled kernels not built")

CODES = np.array([py.CONST, py.IDENT, py.SIN, py.SIGNPOW, py.EXP, py.SQUARE], dtype=np.int_)
finite = st.floats(-3, 3, allow_nan=False)


def drift_args(w):
    return CODES, np.asarray(w, dtype=float), np.array([0, 0, 0, 0.5, 0.3, 0], dtype=float), 0.25


class TestBackendSelection:
    def test_python_backend(self):
        assert kernels.load_backend("python").BACKEND == "python"

    @needs_cython
    def test_default_is_compiled(self):
        assert kernels.load_backend().BACKEND == "cython"

    def test_switch_and_restore(self):
        before = kernels.BACKEND
        try:
            kernels.use_backend("python")
            assert kernels.BACKEND == "python"
            assert kernels.euler_fill is py.euler_fill
        finally:
            kernels.use_backend(None if before == "cython" else "python")
        assert kernels.BACKEND == before


class TestPythonKernels:
    def test_basis_values(self):
        x = np.array([-4.0, 0.0, 4.0])
        np.testing.assert_array_equal(py.basis_eval(py.SIGNPOW, 0.5, x), [-2.0, 0.0, 2.0])
        np.testing.assert_array_equal(py.basis_eval(py.CONST, 0.0, x), [1, 1, 1])
        np.testing.assert_array_equal(py.basis_eval(py.SQUARE, 0.0, x), [16, 0, 16])

    def test_scalar_and_vector_agree(self, rng):
        x = rng.standard_normal(30)
        for c in CODES:
            vec = py.basis_eval(int(c), 0.7, x)
            sca = [py._basis_scalar(int(c), 0.7, v) for v in x]
            np.testing.assert_allclose(vec, sca, rtol=1e-15)

    def test_euler_reports_explosion(self):
        x = np.zeros(50)
        x[0] = 10.0
        k = py.euler_fill(x, 0, np.ones(49), np.zeros(49), 0.0, np.array([py.EXP]), np.array([1.0]),
                          np.array([1.0]), 0.0)
        assert k > 0

    def test_loglik_nodes_hand_value(self):
        x = np.array([1.0, 2.0, 3.0])
        ev = np.array([0, 1, 0], dtype=np.int_)
        w = np.array([0.5, 0.5, 0.0])
        assert py.loglik_nodes(x, 0, 3, ev, w, py.H_SQUARE, 1.0) == pytest.approx(math.log(4) - 0.5 * 5)
        assert py.loglik_nodes(x, 2, 2, ev, w, py.H_SQUARE, 1.0) == 0.0

    def test_loglik_zero_hazard_event(self):
        x = np.array([0.0])
        assert py.loglik_nodes(x, 0, 1, np.array([1], dtype=np.int_), np.zeros(1), py.H_ABS, 1.0) == -math.inf

    def test_bridge_pins_right_end(self, rng):
        t = np.linspace(0, 1, 11)
        x = np.zeros(11)
        x[10] = 3.0
        py.bridge_fill(x, 0, 10, t, 1.0, rng.standard_normal(9))
        assert x[10] == 3.0 and x[0] == 0.0


@needs_cython
class TestParity:
    @settings(max_examples=40, deadline=None)
    @given(st.lists(finite, min_size=6, max_size=6), st.integers(0, 2**32 - 1))
    def test_drift_eval(self, w, seed):
        x = np.random.default_rng(seed).standard_normal(64)
        np.testing.assert_allclose(cy.drift_eval(x, *drift_args(w)), py.drift_eval(x, *drift_args(w)), rtol=1e-13,
                                   atol=1e-13)

    @settings(max_examples=40, deadline=None)
    @given(st.sampled_from(list(CODES)), st.floats(0.05, 1.0), st.integers(0, 2**32 - 1))
    def test_basis_eval(self, code, p, seed):
        x = np.random.default_rng(seed).standard_normal(64)
        np.testing.assert_allclose(cy.basis_eval(int(code), p, x), py.basis_eval(int(code), p, x), rtol=1e-14)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(-1, 1), min_size=6, max_size=6), st.floats(0.1, 3), st.integers(0, 2**32 - 1))
    def test_euler_fill(self, w, sigma, seed):
        rng = np.random.default_rng(seed)
        dt = rng.uniform(0.001, 0.02, 100)
        dw = np.sqrt(dt) * rng.standard_normal(100)
        a, b = np.empty(101), np.empty(101)
        a[0] = b[0] = 0.5
        ka = cy.euler_fill(a, 0, dt, dw, sigma, *drift_args(w))
        kb = py.euler_fill(b, 0, dt, dw, sigma, *drift_args(w))
        # both backends must report the same explosion step (-1: none) and agree before it
        assert ka == kb
        upto = None if ka == -1 else ka
        np.testing.assert_allclose(a[:upto], b[:upto], rtol=1e-12, atol=1e-12)

    def test_euler_explosion_index_agrees(self):
        rng = np.random.default_rng(0)
        dt = rng.uniform(0.001, 0.02, 100)
        dw = np.sqrt(dt) * rng.standard_normal(100)
        a, b = np.full(101, 0.5), np.full(101, 0.5)
        w = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0]
        ka = cy.euler_fill(a, 0, dt, dw, 1.0, *drift_args(w))
        kb = py.euler_fill(b, 0, dt, dw, 1.0, *drift_args(w))
        assert ka == kb > 0
        np.testing.assert_allclose(a[:ka], b[:ka], rtol=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(finite, min_size=6, max_size=6), st.integers(0, 2**32 - 1), st.integers(0, 50))
    def test_girsanov_sum(self, w, seed, lo):
        rng = np.random.default_rng(seed)
        dt = rng.uniform(0.001, 0.02, 100)
        x = np.concatenate(([0.0], np.cumsum(np.sqrt(dt) * rng.standard_normal(100))))
        args = (x, dt, lo, 100, 1.3, *drift_args(w))
        assert cy.girsanov_sum(*args) == pytest.approx(py.girsanov_sum(*args), rel=1e-10, abs=1e-10)

    @settings(max_examples=40, deadline=None)
    @given(st.sampled_from([py.H_ABS, py.H_SQUARE, py.H_POSITIVE, py.H_EXP]), st.integers(0, 2**32 - 1))
    def test_hazard_and_loglik(self, hcode, seed):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal(80) + 0.5
        ev = rng.integers(0, 2, 80).astype(np.int_)
        w = rng.uniform(0, 0.05, 80)
        np.testing.assert_allclose(cy.hazard_eval(hcode, 0.7, x), py.hazard_eval(hcode, 0.7, x), rtol=1e-15)
        a = cy.loglik_nodes(x, 3, 77, ev, w, hcode, 0.7)
        b = py.loglik_nodes(x, 3, 77, ev, w, hcode, 0.7)
        assert a == b == -math.inf or a == pytest.approx(b, rel=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 60), st.floats(0.1, 5), st.integers(0, 2**32 - 1))
    def test_bridge_fill(self, n, sigma, seed):
        rng = np.random.default_rng(seed)
        t = np.concatenate(([0.0], np.cumsum(rng.uniform(0.01, 0.1, n))))
        a = np.zeros(n + 1)
        a[-1] = 1.7
        b = a.copy()
        z = rng.standard_normal(n - 1)
        cy.bridge_fill(a, 0, n, t, sigma, z)
        py.bridge_fill(b, 0, n, t, sigma, z)
        np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-13)
        assert a[-1] == 1.7
