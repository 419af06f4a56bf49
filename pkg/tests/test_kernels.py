"""Compiled and NumPy kernels must agree."""

import numpy as np
import pytest

from conftest import random_model
from mrfgnn import kernels
from mrfgnn.classical import bp_max_product, bp_sum_product, mean_field, trbp
from mrfgnn.oracle import enumerate_mrf

needs_compiled = pytest.mark.skipif("compiled" not in kernels.available(),
                                    reason="extension not built")
KINDS = ["chain", "grid", "wheel", "complete", "barbell"]


def test_python_backend_always_available():
    assert "python" in kernels.available()
    assert kernels.impl is kernels.load(kernels.BACKEND)


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.load("fortran")


@needs_compiled
class TestParity:
    @pytest.mark.parametrize("kind", KINDS)
    def test_enumeration(self, kind):
        m = random_model(kind, 9, 0)
        a = enumerate_mrf(m, backend="compiled")
        b = enumerate_mrf(m, backend="python")
        assert a.log_Z == pytest.approx(b.log_Z, abs=1e-12)
        np.testing.assert_allclose(a.marginals_p1, b.marginals_p1, atol=1e-13)
        assert a.map_state.tolist() == b.map_state.tolist()

    @pytest.mark.parametrize("kind", KINDS)
    @pytest.mark.parametrize("fn", [bp_sum_product, trbp, mean_field])
    def test_fixed_points(self, kind, fn):
        m = random_model(kind, 16, 1)
        a = fn(m, backend="compiled")
        b = fn(m, backend="python")
        assert a.iterations == b.iterations
        np.testing.assert_allclose(a.marginals_p1, b.marginals_p1, atol=1e-12)

    @pytest.mark.parametrize("kind", KINDS)
    def test_max_product(self, kind):
        m = random_model(kind, 9, 2)
        assert (bp_max_product(m, backend="compiled").map_state.tolist()
                == bp_max_product(m, backend="python").map_state.tolist())
