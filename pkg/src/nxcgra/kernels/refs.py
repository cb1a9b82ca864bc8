"""Golden integer reference oracles for the six benchmark kernels.

Shapes follow the benchmark table exactly (conv may be generated at a
reduced image size for CI).  The linear kernels (gemm, conv) keep exact
int32 outputs; the nonlinear kernels produce 8-bit outputs through the
pinned fixed-point procedures in `fixpoint`.
"""

from __future__ import annotations

import numpy as np

from . import fixpoint as fp

__all__ = [
    "ShapeError", "ref_gemm", "ref_conv", "ref_gelu", "ref_norm",
    "ref_quant", "ref_sftmx", "random_inputs", "KERNEL_SHAPES",
]


class ShapeError(ValueError):
    pass


# benchmark descriptor shapes; conv takes (channels, height, width) overrides
KERNEL_SHAPES = {
    "conv": {"img": (3, 128, 128), "wgt": (8, 3, 3, 3), "bias": (8,)},
    "gemm": {"a": (32, 64), "b": (64, 32)},
    "gelu": {"input": (4, 16), "weight": (16,), "bias": (16,)},
    "norm": {"input": (64,), "gamma": (8,), "beta": (8,)},
    "quant": {"input": (64,), "scale": (1,)},
    "sftmx": {"qk_buf": (32,), "attn_mask": (32,), "bias": (32, 32)},
}


def _expect(arr: np.ndarray, shape: tuple, dtype, name: str) -> None:
    if tuple(arr.shape) != tuple(shape):
        raise ShapeError(f"{name}: expected shape {shape}, got {tuple(arr.shape)}")
    if arr.dtype != dtype:
        raise ShapeError(f"{name}: expected dtype {dtype}, got {arr.dtype}")


def ref_gemm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """C[i][j] = sum_k A[i][k] * B[k][j], exact int32."""
    _expect(a, (32, 64), np.int8, "A")
    _expect(b, (64, 32), np.int8, "B")
    return (a.astype(np.int64) @ b.astype(np.int64)).astype(np.int32)


def ref_conv(img: np.ndarray, wgt: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Valid (no padding) stride-1 cross-correlation over 3 input channels
    with a 3x3 window plus per-output-channel bias; exact int32."""
    if img.ndim != 3 or img.shape[0] != 3:
        raise ShapeError(f"Img: expected (3, H, W), got {tuple(img.shape)}")
    if img.dtype != np.int8:
        raise ShapeError(f"Img: expected int8, got {img.dtype}")
    _expect(wgt, (8, 3, 3, 3), np.int8, "Wgt")
    _expect(bias, (8,), np.int32, "Bias")
    _, h, w = img.shape
    oh, ow = h - 2, w - 2
    if oh <= 0 or ow <= 0:
        raise ShapeError(f"Img {h}x{w} too small for a 3x3 window")
    img64 = img.astype(np.int64)
    wgt64 = wgt.astype(np.int64)
    out = np.zeros((8, oh, ow), dtype=np.int64)
    for dy in range(3):
        for dx in range(3):
            patch = img64[:, dy:dy + oh, dx:dx + ow]          # (3, oh, ow)
            out += np.einsum("chw,oc->ohw", patch, wgt64[:, :, dy, dx])
    out += bias.astype(np.int64)[:, None, None]
    return out.astype(np.int32)


def ref_gelu(inp: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Per-column scale and bias into a Q4 preactivation, then integer GELU."""
    _expect(inp, (4, 16), np.int8, "Input")
    _expect(weight, (16,), np.int8, "Weight")
    _expect(bias, (16,), np.int32, "Bias")
    pre = inp.astype(np.int64) * weight.astype(np.int64) + bias.astype(np.int64)
    out = np.empty((4, 16), dtype=np.int8)
    for r in range(4):
        for c in range(16):
            out[r, c] = fp.gelu_q4(int(pre[r, c]))
    return out


def ref_norm(inp: np.ndarray, gamma: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Eight groups of eight channels; gamma/beta broadcast per channel."""
    _expect(inp, (64,), np.int8, "Input")
    _expect(gamma, (8,), np.int8, "Gamma")
    _expect(beta, (8,), np.int8, "Beta")
    out = np.empty(64, dtype=np.int8)
    gs = [int(g) for g in gamma]
    bs = [int(b) for b in beta]
    for g in range(8):
        xs = [int(v) for v in inp[8 * g:8 * g + 8]]
        out[8 * g:8 * g + 8] = fp.norm_group(xs, gs, bs)
    return out


def ref_quant(inp: np.ndarray, scale: np.ndarray) -> np.ndarray:
    _expect(inp, (64,), np.int16, "Input")
    _expect(scale, (1,), np.int32, "Scale")
    s = int(scale[0])
    return np.array([fp.quant_element(int(x), s) for x in inp], dtype=np.int8)


def ref_sftmx(qk_buf: np.ndarray, attn_mask: np.ndarray,
              bias: np.ndarray) -> np.ndarray:
    """One softmax row per bias row; outputs are uint8 rows summing to 255/256."""
    _expect(qk_buf, (32,), np.int8, "QK_BUF")
    _expect(attn_mask, (32,), np.int32, "ATTN_MASK")
    _expect(bias, (32, 32), np.int32, "BIAS")
    qk = [int(v) for v in qk_buf]
    mask = [int(v) for v in attn_mask]
    out = np.empty((32, 32), dtype=np.uint8)
    for r in range(32):
        out[r] = fp.softmax_row(qk, mask, [int(v) for v in bias[r]])
    return out


# ── seeded fixtures ──────────────────────────────────────────────────
#
# Input ranges are part of the harness contract: softmax bias stays within
# +-2^15 so logits respect the procedure's documented domain, quant scales
# stay in [0, 65535] so the 32-bit product is exact, and gelu biases stay
# within +-2^15 (the preactivation clamp handles the rest).

def random_inputs(kernel: str, seed: int, conv_hw: tuple[int, int] = (128, 128)
                  ) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)

    def i8(shape):
        return rng.integers(-128, 128, size=shape, dtype=np.int16).astype(np.int8)

    if kernel == "gemm":
        return {"a": i8((32, 64)), "b": i8((64, 32))}
    if kernel == "conv":
        h, w = conv_hw
        return {
            "img": i8((3, h, w)),
            "wgt": i8((8, 3, 3, 3)),
            "bias": rng.integers(-(1 << 15), 1 << 15, size=8, dtype=np.int32),
        }
    if kernel == "gelu":
        return {
            "input": i8((4, 16)),
            "weight": i8((16,)),
            "bias": rng.integers(-(1 << 15), 1 << 15, size=16, dtype=np.int32),
        }
    if kernel == "norm":
        return {"input": i8((64,)), "gamma": i8((8,)), "beta": i8((8,))}
    if kernel == "quant":
        return {
            "input": rng.integers(-(1 << 15), 1 << 15, size=64, dtype=np.int16),
            "scale": rng.integers(0, 1 << 16, size=1, dtype=np.int32),
        }
    if kernel == "sftmx":
        mask = (rng.random(32) < 0.15).astype(np.int32)
        if mask.all():
            mask[0] = 0  # at least one live entry per row
        return {
            "qk_buf": i8((32,)),
            "attn_mask": mask,
            "bias": rng.integers(-(1 << 15), 1 << 15, size=(32, 32), dtype=np.int32),
        }
    raise ValueError(f"unknown kernel {kernel!r}")
