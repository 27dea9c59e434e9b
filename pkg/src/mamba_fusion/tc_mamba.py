"""Text-based context blocks.

Two paired bidirectional streams per block (text<->visual and
text<->audio). Within a pair, the text stream and the non-text stream
share the continuous state-matrix storage for both directions; their
step-size, input and output selection networks stay separate. Text is
refined by averaging its two per-pair outputs.

What is shared is the continuous state matrix: the discretized transition
still differs per stream because the step size is input-dependent.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Parameter, add, mul, Tensor
from .ssm import BiMamba


class SharedTransitionPair:
    """A text-stream block and a partner-stream block sharing state matrices.

    Sharing is structural: both streams' forward (and backward) SSMs hold
    the same Parameter objects for the state matrix, so gradients from
    either stream accumulate into one storage and an optimizer step keeps
    the values bitwise identical across streams.
    """

    def __init__(self, d_model, state_dim, rng, expansion=2, conv_width=4,
                 scan_mode="parallel", share=True, name="pair"):
        self.share = share
        self.text = BiMamba(d_model, state_dim, rng, expansion=expansion,
                            conv_width=conv_width, scan_mode=scan_mode,
                            name=f"{name}.text")
        shared_f = self.text.fwd.a_log if share else None
        shared_b = self.text.bwd.a_log if share else None
        self.partner = BiMamba(d_model, state_dim, rng, expansion=expansion,
                               conv_width=conv_width, scan_mode=scan_mode,
                               shared_a_log=shared_f,
                               shared_a_log_backward=shared_b,
                               name=f"{name}.partner")

    def parameters(self):
        return self.text.parameters() + self.partner.parameters()

    def __call__(self, c_t, other):
        return self.text(c_t), self.partner(other)


class TcBlock:
    """One context block: a text<->visual pair and a text<->audio pair."""

    def __init__(self, d_model, state_dim, rng, expansion=2, conv_width=4,
                 scan_mode="parallel", share=True, name="tc"):
        self.tv = SharedTransitionPair(d_model, state_dim, rng,
                                       expansion=expansion,
                                       conv_width=conv_width,
                                       scan_mode=scan_mode, share=share,
                                       name=f"{name}.tv")
        self.ta = SharedTransitionPair(d_model, state_dim, rng,
                                       expansion=expansion,
                                       conv_width=conv_width,
                                       scan_mode=scan_mode, share=share,
                                       name=f"{name}.ta")

    def parameters(self):
        return self.tv.parameters() + self.ta.parameters()

    def __call__(self, c_t, e_v, e_a):
        if not (c_t.shape == e_v.shape == e_a.shape):
            raise ValueError(
                f"tc_block: shape mismatch {c_t.shape} {e_v.shape} {e_a.shape}")
        c_t1, c_v = self.tv(c_t, e_v)
        c_t2, c_a = self.ta(c_t, e_a)
        c_t_out = mul(add(c_t1, c_t2), Tensor(0.5))
        return c_t_out, c_v, c_a


class TcStack:
    """Depth-stacked context blocks, each with its own parameters."""

    def __init__(self, depth, d_model, state_dim, rng, expansion=2,
                 conv_width=4, scan_mode="parallel", share=True, name="tc"):
        if depth < 1:
            raise ValueError("context stack depth must be >= 1")
        self.blocks = [
            TcBlock(d_model, state_dim, rng, expansion=expansion,
                    conv_width=conv_width, scan_mode=scan_mode, share=share,
                    name=f"{name}{i}")
            for i in range(depth)
        ]

    def parameters(self):
        return [p for b in self.blocks for p in b.parameters()]

    def __call__(self, c_t, c_v, c_a):
        for block in self.blocks:
            c_t, c_v, c_a = block(c_t, c_v, c_a)
        return c_t, c_v, c_a


def bimamba_param_count(d_model, state_dim, expansion, conv_width=4,
                        count_state=True):
    """Analytic parameter count of one bidirectional block.

    With count_state False the two (channels x state_dim) state matrices
    are excluded (the shared-storage case where another stream owns them).
    """
    inner = expansion * d_model
    n = 2 * d_model                               # norm gamma/beta
    n += d_model * 2 * inner + 2 * inner          # in projection
    n += conv_width * inner + inner               # depthwise conv
    per_dir = (inner * inner + inner              # delta selection
               + 2 * inner * state_dim            # B and C selection
               + inner)                           # d_skip
    if count_state:
        per_dir += inner * state_dim
    n += 2 * per_dir
    n += inner * d_model + d_model                # out projection
    return n


def shared_param_count(depth, d_model, state_dim, expansion, conv_width=4,
                       share=True):
    """Analytic parameter count of a context stack.

    Sharing saves 2 * channels * state_dim parameters per pair (forward
    plus backward state matrices of the partner stream).
    """
    full = bimamba_param_count(d_model, state_dim, expansion, conv_width)
    partner = bimamba_param_count(d_model, state_dim, expansion, conv_width,
                                  count_state=not share)
    return depth * 2 * (full + partner)


def sharing_saving(d_model, state_dim, expansion):
    """Parameters saved by sharing within one pair."""
    return 2 * expansion * d_model * state_dim
