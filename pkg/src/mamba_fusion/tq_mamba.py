"""Text-guided query fusion.

Multi-head cross-attention with refined text as the query over the
time-concatenated audio/visual features, a stack of latent bidirectional
blocks, and the max-pool regression head.
"""

from __future__ import annotations

import numpy as np

from .autodiff import (
    Parameter, Tensor, add, concat, concat_time, div, layer_norm, matmul,
    max_over_time, mul, reshape, slicer, softmax_lastdim, transpose,
)
from .ssm import BiMamba


class CrossAttention:
    """Pre-norm residual multi-head scaled dot-product cross-attention.

    No positional encodings are added to queries or keys.
    """

    def __init__(self, d_model, heads, rng, name="xattn"):
        if d_model % heads != 0:
            raise ValueError(
                f"model dim {d_model} not divisible by {heads} heads")
        self.d_model = d_model
        self.heads = heads
        self.head_dim = d_model // heads
        s = 1.0 / np.sqrt(d_model)
        self.norm_gamma = Parameter(np.ones(d_model), name=f"{name}.norm_gamma")
        self.norm_beta = Parameter(np.zeros(d_model), name=f"{name}.norm_beta")
        self.w_q = Parameter(rng.uniform(-s, s, (d_model, d_model)), name=f"{name}.w_q")
        self.w_k = Parameter(rng.uniform(-s, s, (d_model, d_model)), name=f"{name}.w_k")
        self.w_v = Parameter(rng.uniform(-s, s, (d_model, d_model)), name=f"{name}.w_v")
        self.w_o = Parameter(rng.uniform(-s, s, (d_model, d_model)), name=f"{name}.w_o")
        self.b_o = Parameter(np.zeros(d_model), name=f"{name}.b_o")

    def parameters(self):
        return [self.norm_gamma, self.norm_beta,
                self.w_q, self.w_k, self.w_v, self.w_o, self.b_o]

    def attend(self, query, keyvalue):
        """Attention output before the residual connection."""
        qn = layer_norm(query, self.norm_gamma, self.norm_beta)
        q = matmul(qn, self.w_q)
        k = matmul(keyvalue, self.w_k)
        v = matmul(keyvalue, self.w_v)
        scale = Tensor(np.sqrt(float(self.head_dim)))
        outs = []
        for h in range(self.heads):
            cols = slice(h * self.head_dim, (h + 1) * self.head_dim)
            qh = slicer(q, (slice(None), cols))
            kh = slicer(k, (slice(None), cols))
            vh = slicer(v, (slice(None), cols))
            weights = softmax_lastdim(div(matmul(qh, transpose(kh)), scale))
            outs.append(matmul(weights, vh))
        merged = concat(outs, axis=1)
        return add(matmul(merged, self.w_o), self.b_o)

    def __call__(self, query, keyvalue):
        return add(query, self.attend(query, keyvalue))

    def attention_weights(self, query, keyvalue):
        """Per-head row-stochastic attention matrices (diagnostic path)."""
        qn = layer_norm(query, self.norm_gamma, self.norm_beta)
        q = matmul(qn, self.w_q)
        k = matmul(keyvalue, self.w_k)
        scale = Tensor(np.sqrt(float(self.head_dim)))
        ws = []
        for h in range(self.heads):
            cols = slice(h * self.head_dim, (h + 1) * self.head_dim)
            qh = slicer(q, (slice(None), cols))
            kh = slicer(k, (slice(None), cols))
            ws.append(softmax_lastdim(div(matmul(qh, transpose(kh)), scale)))
        return ws


def text_query(attn, c_t, c_v, c_a):
    """Query the time-concatenation of visual and audio features with text."""
    if not (c_t.shape == c_v.shape == c_a.shape):
        raise ValueError(
            f"text_query: shape mismatch {c_t.shape} {c_v.shape} {c_a.shape}")
    return attn(c_t, concat_time([c_v, c_a]))


class LatentStack:
    """Latent bidirectional blocks applied after the text query."""

    def __init__(self, depth, d_model, state_dim, rng, expansion=2,
                 conv_width=4, scan_mode="parallel", name="tq"):
        self.blocks = [
            BiMamba(d_model, state_dim, rng, expansion=expansion,
                    conv_width=conv_width, scan_mode=scan_mode,
                    name=f"{name}{i}")
            for i in range(depth)
        ]

    def parameters(self):
        return [p for b in self.blocks for p in b.parameters()]

    def __call__(self, q_f):
        for block in self.blocks:
            q_f = block(q_f)
        return q_f


class FusionHead:
    """Max pooling over time followed by a fully connected map to a scalar."""

    def __init__(self, d_model, rng, name="head"):
        s = 1.0 / np.sqrt(d_model)
        self.w = Parameter(rng.uniform(-s, s, (d_model, 1)), name=f"{name}.w")
        self.b = Parameter(np.zeros(1), name=f"{name}.b")

    def parameters(self):
        return [self.w, self.b]

    def __call__(self, f_z):
        pooled = max_over_time(f_z)
        out = add(matmul(reshape(pooled, (1, f_z.shape[1])), self.w), self.b)
        return reshape(out, ())
