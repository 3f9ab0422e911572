"""Stacked convolutional encoder blocks with GLU gating and residual adds."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .embedding import glorot


class EncoderStack:
    """L conv-GLU residual blocks; every block preserves (N, d_e).

    Each block maps its input through a same-padded 1-D convolution to
    2*d_e channels, splits into [A; B], gates z = A * sigmoid(B), and adds
    the block input back.  The same stack is applied to both arguments.
    """

    def __init__(self, layers: int, d_e: int, registry: ad.ParamRegistry,
                 rng: np.random.Generator, kernel_width: int = 3, prefix: str = "encoder"):
        self.layers = layers
        self.d_e = d_e
        self.params = []
        for l in range(layers):
            w = registry.register(
                f"{prefix}.l{l}.w",
                ad.parameter(glorot(rng, (kernel_width, d_e, 2 * d_e), kernel_width * d_e, 2 * d_e)))
            b = registry.register(f"{prefix}.l{l}.b", ad.parameter(np.zeros(2 * d_e)))
            self.params.append((w, b))

    def glu_block(self, x: ad.Node, layer: int) -> ad.Node:
        if not 0 <= layer < self.layers:
            raise IndexError(f"layer {layer} out of range [0, {self.layers})")
        w, b = self.params[layer]
        pre = ad.conv1d(x, w, b)  # (..., N, 2*d_e)
        half = self.d_e
        a_part = _slice_last(pre, 0, half)
        b_part = _slice_last(pre, half, 2 * half)
        z = ad.mul(a_part, ad.sigmoid(b_part))
        return ad.add(z, x)

    def encode(self, x: ad.Node) -> list[ad.Node]:
        """Run all blocks; returns every layer's output, length L."""
        outputs = []
        cur = x
        for l in range(self.layers):
            cur = self.glu_block(cur, l)
            outputs.append(cur)
        return outputs


def _slice_last(x: ad.Node, start: int, stop: int) -> ad.Node:
    """Differentiable slice along the last axis."""
    data = x.data[..., start:stop]

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[..., start:stop] = g
        ad._accumulate(x, gx)

    return ad._result(data, (x,), "slice", backward)
