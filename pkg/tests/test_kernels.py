"""Lane selection and numerical parity between the compiled kernels and
their NumPy twins."""

import os
import subprocess
import sys

import numpy as np
import pytest

import pivotgen.kernels as kernels
from pivotgen.kernels import _py

try:
    from pivotgen.kernels import _ext
except ImportError:
    _ext = None

needs_ext = pytest.mark.skipif(_ext is None, reason="compiled extension not built")

RNG = np.random.default_rng(11)


def test_active_lane_is_reported():
    assert kernels.ACTIVE in ("py", "ext")
    if os.environ.get("PIVOTGEN_KERNELS", "auto") == "py":
        assert kernels.ACTIVE == "py"
    else:
        assert kernels.ACTIVE == ("ext" if _ext is not None else "py")


def test_env_var_forces_python_lane():
    out = subprocess.run(
        [sys.executable, "-c", "import pivotgen.kernels as k; print(k.ACTIVE)"],
        env={**os.environ, "PIVOTGEN_KERNELS": "py"},
        capture_output=True,
        text=True,
        check=True,
    )
    assert out.stdout.strip() == "py"


def test_env_var_rejects_garbage():
    out = subprocess.run(
        [sys.executable, "-c", "import pivotgen.kernels"],
        env={**os.environ, "PIVOTGEN_KERNELS": "turbo"},
        capture_output=True,
        text=True,
    )
    assert out.returncode != 0
    assert "PIVOTGEN_KERNELS" in out.stderr


@needs_ext
@pytest.mark.parametrize("rows,cols", [(1, 1), (7, 5), (64, 163), (512, 8)])
def test_softmax_parity(rows, cols):
    x = (RNG.normal(size=(rows, cols)) * 4).astype(np.float32)
    np.testing.assert_allclose(_ext.softmax_fwd(x), _py.softmax_fwd(x), atol=2e-6)
    y = _py.softmax_fwd(x)
    gy = RNG.normal(size=x.shape).astype(np.float32)
    np.testing.assert_allclose(_ext.softmax_bwd(y, gy), _py.softmax_bwd(y, gy), atol=2e-6)


@needs_ext
def test_cross_entropy_parity():
    logits = (RNG.normal(size=(50, 163)) * 3).astype(np.float32)
    targets = RNG.integers(0, 163, size=50)
    l_ext, p_ext = _ext.cross_entropy_fwd(logits, targets)
    l_py, p_py = _py.cross_entropy_fwd(logits, targets)
    np.testing.assert_allclose(l_ext, l_py, atol=3e-6)
    np.testing.assert_allclose(p_ext, p_py, atol=2e-6)
    g = RNG.normal(size=50).astype(np.float32)
    np.testing.assert_allclose(
        _ext.cross_entropy_bwd(p_py, targets, g), _py.cross_entropy_bwd(p_py, targets, g), atol=2e-6
    )


@needs_ext
def test_layernorm_parity():
    x = (RNG.normal(size=(40, 64)) * 2 + 1).astype(np.float32)
    gain = RNG.normal(size=64).astype(np.float32)
    bias = RNG.normal(size=64).astype(np.float32)
    y1, h1, i1 = _ext.layernorm_fwd(x, gain, bias, 1e-5)
    y2, h2, i2 = _py.layernorm_fwd(x, gain, bias, 1e-5)
    np.testing.assert_allclose(y1, y2, atol=3e-6)
    np.testing.assert_allclose(h1, h2, atol=3e-6)
    np.testing.assert_allclose(i1, i2, rtol=2e-6)
    gy = RNG.normal(size=x.shape).astype(np.float32)
    for a, b in zip(_ext.layernorm_bwd(h2, i2, gain, gy), _py.layernorm_bwd(h2, i2, gain, gy)):
        np.testing.assert_allclose(a, b, atol=1e-4)


@needs_ext
def test_gelu_parity():
    x = (RNG.normal(size=3000) * 4).astype(np.float32)
    gy = RNG.normal(size=3000).astype(np.float32)
    np.testing.assert_allclose(_ext.gelu_fwd(x), _py.gelu_fwd(x), atol=2e-6)
    np.testing.assert_allclose(_ext.gelu_bwd(x, gy), _py.gelu_bwd(x, gy), atol=4e-6)


@needs_ext
def test_adamw_parity():
    p1 = RNG.normal(size=200).astype(np.float32)
    p2 = p1.copy()
    g = RNG.normal(size=200).astype(np.float32)
    m1, v1 = np.zeros(200, np.float32), np.zeros(200, np.float32)
    m2, v2 = np.zeros(200, np.float32), np.zeros(200, np.float32)
    for step in range(1, 6):
        bc1 = 1 / (1 - 0.9**step)
        bc2 = 1 / (1 - 0.999**step)
        _ext.adamw_update(p1, g, m1, v1, 1e-3, 0.9, 0.999, 1e-8, 0.01, bc1, bc2)
        _py.adamw_update(p2, g, m2, v2, 1e-3, 0.9, 0.999, 1e-8, 0.01, bc1, bc2)
    np.testing.assert_allclose(p1, p2, atol=1e-6)
    np.testing.assert_allclose(m1, m2, atol=1e-6)
    np.testing.assert_allclose(v1, v2, atol=1e-6)


def test_layernorm_constant_row_mean_stays_zero():
    x = np.full((3, 16), 1.651837, dtype=np.float32)
    y, _, _ = kernels.layernorm_fwd(x, np.ones(16, np.float32), np.zeros(16, np.float32), 1e-5)
    assert np.abs(y.mean(axis=1)).max() <= 1e-5
