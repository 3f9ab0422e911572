"""Layer-wise bi-attention between the two arguments and 2-max pooling.

Per layer l: M = FFN(u1) u2^T, then o2 = rowsoftmax(M) u2 and
o1 = rowsoftmax(M^T) u1.  Each o matrix is 2-max pooled per feature, and
the per-layer pieces concatenate into the pair representation r of size
4 * d_e * L.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .embedding import glorot


@dataclass
class PairRepresentation:
    r: np.ndarray                  # (d_r,)
    layer_parts: list[np.ndarray]  # each (4 * d_e,)


class PairAttention:
    def __init__(self, d_e: int, registry: ad.ParamRegistry, rng: np.random.Generator,
                 use_relu: bool = True, prefix: str = "attention"):
        self.d_e = d_e
        self.use_relu = use_relu
        self.w = registry.register(f"{prefix}.ffn.w",
                                   ad.parameter(glorot(rng, (d_e, d_e), d_e, d_e)))
        self.b = registry.register(f"{prefix}.ffn.b", ad.parameter(np.zeros(d_e)))

    def _ffn(self, u: ad.Node) -> ad.Node:
        h = ad.add(ad.matmul(u, self.w), self.b)
        return ad.relu(h) if self.use_relu else h

    def bi_attention(self, u1: ad.Node, u2: ad.Node):
        """Cross attention in both directions from one affinity matrix."""
        if u1.data.shape != u2.data.shape:
            raise ad.ShapeError(f"bi_attention: {u1.data.shape} vs {u2.data.shape}")
        m = ad.matmul(self._ffn(u1), ad.transpose(u2))   # (..., N, N)
        o2 = ad.matmul(ad.softmax(m, axis=-1), u2)
        o1 = ad.matmul(ad.softmax(ad.transpose(m), axis=-1), u1)
        return o1, o2

    def pair_node(self, layers1: list[ad.Node], layers2: list[ad.Node]) -> ad.Node:
        """Pair representation over all layers, shape (..., 4 * d_e * L)."""
        parts = []
        for u1, u2 in zip(layers1, layers2):
            o1, o2 = self.bi_attention(u1, u2)
            parts.append(ad.concat([ad.seq_top2(o1), ad.seq_top2(o2)], axis=-1))
        return parts[0] if len(parts) == 1 else ad.concat(parts, axis=-1)

    def pair_representation(self, layers1, layers2) -> PairRepresentation:
        """Eval-mode convenience over unbatched (N, d_e) layer outputs."""
        parts = []
        for u1, u2 in zip(layers1, layers2):
            o1, o2 = self.bi_attention(ad.as_node(u1), ad.as_node(u2))
            parts.append(ad.concat([ad.seq_top2(o1), ad.seq_top2(o2)], axis=-1).data.copy())
        return PairRepresentation(np.concatenate(parts), parts)


def top2_pool(o) -> np.ndarray:
    """Standalone 2-max pooling over the sequence axis, (N, C) -> (2C,)."""
    return ad.seq_top2(ad.as_node(o)).data.copy()
