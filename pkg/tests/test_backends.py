"""The numba kernels and the pure-numpy fallback must agree."""

import os
import subprocess
import sys

import numpy as np
import pytest

from conftest import rel_error
from edgenet.kernels import nb_backend, np_backend

RNG = np.random.default_rng(0)


def rand(*shape):
    return RNG.normal(0, 1, shape).astype(np.float32)


class TestKernelParity:
    def test_conv2d_forward(self):
        x, w, b = rand(3, 9, 9), rand(4, 3, 3, 3), rand(4)
        for stride, pad in [(1, 0), (1, 1), (2, 1)]:
            a = np_backend.conv2d_fwd(x, w, b, stride, pad)
            c = nb_backend.conv2d_fwd(x, w, b, stride, pad)
            assert rel_error(a, c) < 1e-5

    def test_conv2d_backward(self):
        x, w = rand(3, 8, 8), rand(4, 3, 3, 3)
        gy = rand(4, 8, 8)
        a = np_backend.conv2d_bwd(x, w, gy, 1, 1, True, True, True)
        c = nb_backend.conv2d_bwd(x, w, gy, 1, 1, True, True, True)
        for ga, gc in zip(a, c):
            assert rel_error(ga, gc) < 1e-5

    def test_depthwise(self):
        x = rand(5, 7, 7)
        kern = np.zeros((3, 3), dtype=np.float32)
        kern[0, 2] = 1.0
        np.testing.assert_array_equal(
            np_backend.depthwise3x3_fwd(x, kern), nb_backend.depthwise3x3_fwd(x, kern)
        )

    def test_local_attention(self):
        q, k, v = rand(8, 6, 6), rand(8, 6, 6), rand(8, 6, 6)
        out_a, attn_a = np_backend.local_attn_fwd(q, k, v, 2, 2)
        out_c, attn_c = nb_backend.local_attn_fwd(q, k, v, 2, 2)
        assert rel_error(out_a, out_c) < 1e-5
        assert rel_error(attn_a, attn_c) < 1e-5
        g = rand(8, 6, 6)
        for ga, gc in zip(
            np_backend.local_attn_bwd(q, k, v, attn_a, g, 2, 2),
            nb_backend.local_attn_bwd(q, k, v, attn_c, g, 2, 2),
        ):
            assert rel_error(ga, gc) < 1e-5

    def test_bilinear(self):
        x = rand(3, 5, 5)
        a = np_backend.bilinear_fwd(x, 3)
        c = nb_backend.bilinear_fwd(x, 3)
        assert rel_error(a, c) < 1e-6
        gy = rand(3, 15, 15)
        assert rel_error(
            np_backend.bilinear_bwd(gy, 3, 5, 5), nb_backend.bilinear_bwd(gy, 3, 5, 5)
        ) < 1e-5

    def test_nms(self):
        p = RNG.random((12, 10)).astype(np.float32)
        np.testing.assert_array_equal(np_backend.nms_thin(p), nb_backend.nms_thin(p))

    def test_greedy_match(self):
        for _ in range(10):
            pred = np.argwhere(RNG.random((9, 9)) < 0.3).astype(np.int64)
            gt = np.argwhere(RNG.random((9, 9)) < 0.3).astype(np.int64)
            tol = float(RNG.uniform(0.5, 3.0))
            assert np_backend.greedy_match(pred, gt, tol) == nb_backend.greedy_match(pred, gt, tol)


class TestBackendSelection:
    @pytest.mark.parametrize("flag,expected", [("numpy", "numpy"), ("numba", "numba")])
    def test_env_flag_selects_backend(self, flag, expected):
        code = "import edgenet.kernels as k; print(k.BACKEND)"
        env = dict(os.environ, EDGE_BACKEND=flag)
        out = subprocess.run(
            [sys.executable, "-c", code], env=env, capture_output=True, text=True
        )
        assert out.returncode == 0, out.stderr
        assert out.stdout.strip() == expected

    def test_bad_flag_rejected(self):
        code = "import edgenet.kernels"
        env = dict(os.environ, EDGE_BACKEND="cuda")
        out = subprocess.run(
            [sys.executable, "-c", code], env=env, capture_output=True, text=True
        )
        assert out.returncode != 0
