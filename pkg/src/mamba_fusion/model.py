"""Full text-enhanced fusion model.

Wires alignment and text-aware enhancement, the shared-transition context
stack, the text-guided query stage, and the regression head into a single
trainable object. Ablation switches cover enhancement, reconstruction,
state-matrix sharing, and an attention-substituted variant in which every
bidirectional scan block is replaced by a self-attention block.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import Tensor, unique_parameters
from .tc_mamba import TcStack
from .tme import Aligner, TextReconstructor, enhance, recon_loss, \
    threshold_mask, token_similarity
from .tq_mamba import CrossAttention, FusionHead, LatentStack, text_query


@dataclass
class ModelConfig:
    length: int = 16          # aligned sequence length, equals the text length
    d_model: int = 32
    state_dim: int = 8
    expansion: int = 1
    tc_depth: int = 1
    tq_depth: int = 1
    heads: int = 4
    tau: float = 0.07
    threshold_scale: float = 1.0   # similarity threshold = scale / length
    conv_width: int = 4
    scan_mode: str = "parallel"
    # raw per-modality shapes (text length must equal `length`)
    t_text: int = 16
    d_text: int = 32
    t_visual: int = 24
    d_visual: int = 16
    t_audio: int = 32
    d_audio: int = 8
    label_low: float = -3.0
    label_high: float = 3.0
    # ablations
    enhancement: bool = True
    reconstruction: bool = True
    share_transitions: bool = True
    use_attention: bool = False

    def __post_init__(self):
        if self.t_text != self.length:
            raise ValueError("aligned length must equal the text length")
        if self.d_model % self.heads != 0:
            raise ValueError("d_model must be divisible by heads")


# Table-style presets; the desk preset is the default test scale.
PRESETS = {
    "desk": ModelConfig(),
    "mosi": ModelConfig(length=50, d_model=128, state_dim=12, expansion=4,
                        tc_depth=1, tq_depth=1, heads=8,
                        t_text=50, d_text=768, t_visual=500, d_visual=20,
                        t_audio=375, d_audio=5),
    "mosei": ModelConfig(length=50, d_model=128, state_dim=12, expansion=4,
                         tc_depth=2, tq_depth=2, heads=8,
                         t_text=50, d_text=768, t_visual=500, d_visual=35,
                         t_audio=500, d_audio=74),
    "sims": ModelConfig(length=39, d_model=128, state_dim=16, expansion=2,
                        tc_depth=1, tq_depth=2, heads=8,
                        t_text=39, d_text=768, t_visual=55, d_visual=709,
                        t_audio=400, d_audio=33,
                        label_low=-1.0, label_high=1.0),
}


class SelfAttentionBlock:
    """Self-attention stand-in for a scan block (attention-substituted variant)."""

    def __init__(self, d_model, heads, rng, name="trans"):
        self.attn = CrossAttention(d_model, heads, rng, name=name)

    def parameters(self):
        return self.attn.parameters()

    def __call__(self, x):
        return self.attn(x, x)


class _TransStreams:
    """Per-stream self-attention stacks replacing the context pairs."""

    def __init__(self, depth, d_model, heads, rng, name="tc_trans"):
        self.streams = {
            m: [SelfAttentionBlock(d_model, heads, rng, name=f"{name}.{m}{i}")
                for i in range(depth)]
            for m in ("t", "v", "a")
        }

    def parameters(self):
        return [p for blocks in self.streams.values()
                for b in blocks for p in b.parameters()]

    def __call__(self, c_t, c_v, c_a):
        for b in self.streams["t"]:
            c_t = b(c_t)
        for b in self.streams["v"]:
            c_v = b(c_v)
        for b in self.streams["a"]:
            c_a = b(c_a)
        return c_t, c_v, c_a


class TextFusionModel:
    """End-to-end model from raw (possibly corrupted) features to a score."""

    def __init__(self, config: ModelConfig, seed=0):
        self.config = config
        rng = np.random.default_rng(seed)
        c = config
        self.align_t = Aligner(c.t_text, c.d_text, c.length, c.d_model, rng,
                               name="align_t")
        self.align_v = Aligner(c.t_visual, c.d_visual, c.length, c.d_model,
                               rng, name="align_v")
        self.align_a = Aligner(c.t_audio, c.d_audio, c.length, c.d_model,
                               rng, name="align_a")
        self.reconstructor = TextReconstructor(c.d_model, c.d_text, rng)
        if c.use_attention:
            self.context = _TransStreams(c.tc_depth, c.d_model, c.heads, rng)
            self.latent = _TransStreams(c.tq_depth, c.d_model, c.heads, rng,
                                        name="tq_trans")
            self._latent_is_streams = True
        else:
            self.context = TcStack(c.tc_depth, c.d_model, c.state_dim, rng,
                                   expansion=c.expansion,
                                   conv_width=c.conv_width,
                                   scan_mode=c.scan_mode,
                                   share=c.share_transitions)
            self.latent = LatentStack(c.tq_depth, c.d_model, c.state_dim, rng,
                                      expansion=c.expansion,
                                      conv_width=c.conv_width,
                                      scan_mode=c.scan_mode)
            self._latent_is_streams = False
        self.cross_attn = CrossAttention(c.d_model, c.heads, rng)
        self.head = FusionHead(c.d_model, rng)

    def parameters(self):
        ps = (self.align_t.parameters() + self.align_v.parameters()
              + self.align_a.parameters() + self.reconstructor.parameters()
              + self.context.parameters() + self.cross_attn.parameters()
              + self.head.parameters())
        ps += self.latent.parameters()
        return unique_parameters(ps)

    def _apply_latent(self, q_f):
        if self._latent_is_streams:
            for b in self.latent.streams["t"]:
                q_f = b(q_f)
            return q_f
        return self.latent(q_f)

    def forward(self, x_t, x_v, x_a, x_t_clean=None, p_t=None):
        """Run the model on one sample.

        x_m are raw (corrupted) feature arrays or Tensors. When the clean
        text features and the text presence mask are given, the masked
        reconstruction loss is returned alongside the prediction;
        otherwise it is zero.
        """
        c = self.config
        x_t = x_t if isinstance(x_t, Tensor) else Tensor(x_t)
        x_v = x_v if isinstance(x_v, Tensor) else Tensor(x_v)
        x_a = x_a if isinstance(x_a, Tensor) else Tensor(x_a)
        h_t = self.align_t(x_t)
        h_v = self.align_v(x_v)
        h_a = self.align_a(x_a)

        if c.enhancement:
            # effective threshold is threshold_scale / length (0 keeps all pairs)
            theta_len = np.inf if c.threshold_scale == 0 \
                else c.length / c.threshold_scale
            s_vt = token_similarity(h_v, h_t, c.tau)
            e_v = enhance(h_v, s_vt, threshold_mask(s_vt, theta_len), h_t)
            s_at = token_similarity(h_a, h_t, c.tau)
            e_a = enhance(h_a, s_at, threshold_mask(s_at, theta_len), h_t)
        else:
            e_v, e_a = h_v, h_a

        if c.reconstruction and x_t_clean is not None and p_t is not None:
            x_tilde = self.reconstructor(h_t)
            rec = recon_loss(Tensor(np.asarray(x_t_clean)), x_tilde, p_t)
        else:
            rec = Tensor(0.0)

        c_t, c_v, c_a = self.context(h_t, e_v, e_a)
        q_f = text_query(self.cross_attn, c_t, c_v, c_a)
        f_z = self._apply_latent(q_f)
        y_hat = self.head(f_z)
        return y_hat, rec

    def predict(self, x_t, x_v, x_a):
        y_hat, _ = self.forward(x_t, x_v, x_a)
        return float(y_hat.data)

    # -- checkpointing ------------------------------------------------------

    def state_arrays(self):
        """Ordered (name, array) pairs of unique parameters."""
        return [(p.name, p.data) for p in self.parameters()]

    def load_state_arrays(self, named):
        params = self.parameters()
        if len(named) != len(params):
            raise ValueError(
                f"checkpoint has {len(named)} tensors, model has {len(params)}")
        for p, (name, arr) in zip(params, named):
            if p.data.shape != arr.shape:
                raise ValueError(
                    f"shape mismatch for {p.name}: checkpoint {arr.shape}, "
                    f"model {p.data.shape}")
            p.data = arr.astype(p.data.dtype)


def build_model(preset="desk", seed=0, **overrides):
    cfg = replace(PRESETS[preset], **overrides) if overrides else PRESETS[preset]
    return TextFusionModel(cfg, seed=seed)
