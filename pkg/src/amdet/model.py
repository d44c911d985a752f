"""The three-block attention classifier.

Per sample, features (F, 2f, C) flow through:

1. spectral block: each frame is a 2f-token sequence with C-dim tokens,
   run through shared transformer encoder layers (post-norm residuals),
2. spatial block: per-frame transpose to C tokens of dim 2f, then shared
   encoder layers again,
3. temporal block: frames are flattened and soft-attention pooled into a
   single vector using one learned score per frame,
4. a single fully connected classification layer.

All functions operate on a batch laid out (B, F, 2f, C) and record onto an
engine Tape so gradients are available. Parameters live in a flat name ->
array dict; encoder weights are shared across frames by construction (the
frame axis is just a batch axis).
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, asdict

import numpy as np

from .engine import Tape, Tensor
from .errors import DataError, NumericalError

ABLATABLE_BLOCKS = ("spectral", "spatial", "temporal")


@dataclass(frozen=True)
class ModelConfig:
    channels: int                 # C
    bands: int                    # f  (feature axis is 2f: DE + PSD rows)
    frames: int                   # frames per sample
    classes: int
    spectral_layers: int = 1
    spatial_layers: int = 1
    spectral_heads: int = 2
    spatial_heads: int = 2
    mlp_ratio: int = 32
    seed: int = 0

    def __post_init__(self):
        if min(self.channels, self.bands, self.frames) < 1 or self.classes < 2:
            raise DataError("model dimensions must be positive (classes >= 2)")
        if self.spectral_layers < 1 or self.spatial_layers < 1:
            raise DataError("encoder layer counts must be >= 1")
        if self.channels % self.spectral_heads != 0:
            raise DataError(
                f"channels={self.channels} not divisible by "
                f"spectral_heads={self.spectral_heads}")
        if self.feature_dim % self.spatial_heads != 0:
            raise DataError(
                f"feature dim {self.feature_dim} not divisible by "
                f"spatial_heads={self.spatial_heads}")
        if self.mlp_ratio < 1:
            raise DataError("mlp_ratio must be >= 1")

    @property
    def feature_dim(self) -> int:
        return 2 * self.bands

    @property
    def flat_dim(self) -> int:
        return self.feature_dim * self.channels

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def _rng_for(seed: int, name: str) -> np.random.Generator:
    # independent, name-keyed stream so adding a parameter never shifts others
    return np.random.default_rng(
        np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF,
                                zlib.crc32(name.encode())]))


def _linear(params, seed, name, fan_in, fan_out, zero_bias=False):
    bound = math.sqrt(1.0 / fan_in)
    params[f"{name}.w"] = _rng_for(seed, f"{name}.w").uniform(
        -bound, bound, (fan_in, fan_out))
    if zero_bias:
        params[f"{name}.b"] = np.zeros(fan_out)
    else:
        params[f"{name}.b"] = _rng_for(seed, f"{name}.b").uniform(
            -bound, bound, fan_out)


def _encoder_params(params, seed, prefix, d, hidden):
    for proj in ("wq", "wk", "wv", "wo"):
        _linear(params, seed, f"{prefix}.attn.{proj}", d, d)
    for ln in ("ln1", "ln2"):
        params[f"{prefix}.{ln}.g"] = np.ones(d)
        params[f"{prefix}.{ln}.b"] = np.zeros(d)
    _linear(params, seed, f"{prefix}.mlp.w1", d, hidden)
    _linear(params, seed, f"{prefix}.mlp.w2", hidden, d)


def init_params(cfg: ModelConfig) -> dict[str, np.ndarray]:
    """Seeded parameter dict; every tensor keyed by a stable dotted name."""
    p: dict[str, np.ndarray] = {}
    d2f, c = cfg.feature_dim, cfg.channels
    p["spectral.pos"] = _rng_for(cfg.seed, "spectral.pos").normal(
        0.0, 0.02, (d2f, c))
    for layer in range(cfg.spectral_layers):
        _encoder_params(p, cfg.seed, f"spectral.l{layer}", c,
                        c * cfg.mlp_ratio)
    p["spatial.pos"] = _rng_for(cfg.seed, "spatial.pos").normal(
        0.0, 0.02, (c, d2f))
    for layer in range(cfg.spatial_layers):
        _encoder_params(p, cfg.seed, f"spatial.l{layer}", d2f,
                        d2f * cfg.mlp_ratio)
    _linear(p, cfg.seed, "temporal.score", cfg.flat_dim, 1)
    _linear(p, cfg.seed, "classifier", cfg.flat_dim, cfg.classes,
            zero_bias=True)
    return p


def param_count(params: dict[str, np.ndarray]) -> int:
    return sum(v.size for v in params.values())


def wrap_params(params: dict[str, np.ndarray]) -> dict[str, Tensor]:
    """Fresh Tensor views over the live parameter arrays for one tape."""
    return {k: Tensor(v, name=k) for k, v in params.items()}


# ----------------------------------------------------------------- forward


def mha(tape: Tape, p: dict[str, Tensor], prefix: str, x: Tensor,
        heads: int) -> tuple[Tensor, list[Tensor]]:
    """Multi-head scaled dot-product self-attention over the token axis.

    x is (..., n_tokens, d) with d divisible by heads. Returns the projected
    output and the per-head attention matrices.
    """
    d = x.data.shape[-1]
    if d % heads != 0:
        raise DataError(f"token dim {d} not divisible by {heads} heads")
    if not np.all(np.isfinite(x.data)):
        raise NumericalError("non-finite attention input")
    q = tape.add(tape.matmul(x, p[f"{prefix}.attn.wq.w"]), p[f"{prefix}.attn.wq.b"])
    k = tape.add(tape.matmul(x, p[f"{prefix}.attn.wk.w"]), p[f"{prefix}.attn.wk.b"])
    v = tape.add(tape.matmul(x, p[f"{prefix}.attn.wv.w"]), p[f"{prefix}.attn.wv.b"])
    dk = d // heads
    head_outs, attns = [], []
    for h in range(heads):
        lo, hi = h * dk, (h + 1) * dk
        qh = tape.slice_last(q, lo, hi)
        kh = tape.slice_last(k, lo, hi)
        vh = tape.slice_last(v, lo, hi)
        scores = tape.scale(tape.matmul(qh, tape.transpose(kh)),
                            1.0 / math.sqrt(dk))
        attn = tape.softmax(scores)
        attns.append(attn)
        head_outs.append(tape.matmul(attn, vh))
    concat = head_outs[0] if heads == 1 else tape.concat_last(head_outs)
    out = tape.add(tape.matmul(concat, p[f"{prefix}.attn.wo.w"]),
                   p[f"{prefix}.attn.wo.b"])
    return out, attns


def encoder_layer(tape: Tape, p: dict[str, Tensor], prefix: str, x: Tensor,
                  heads: int) -> tuple[Tensor, list[Tensor]]:
    """Post-norm transformer encoder layer: LN(MHA(x)+x), then LN(MLP(h)+h)."""
    attended, attns = mha(tape, p, prefix, x, heads)
    h = tape.layer_norm(tape.add(attended, x),
                        p[f"{prefix}.ln1.g"], p[f"{prefix}.ln1.b"])
    hidden = tape.relu(tape.add(tape.matmul(h, p[f"{prefix}.mlp.w1.w"]),
                                p[f"{prefix}.mlp.w1.b"]))
    mlp_out = tape.add(tape.matmul(hidden, p[f"{prefix}.mlp.w2.w"]),
                       p[f"{prefix}.mlp.w2.b"])
    out = tape.layer_norm(tape.add(mlp_out, h),
                          p[f"{prefix}.ln2.g"], p[f"{prefix}.ln2.b"])
    return out, attns


def _check_input(cfg: ModelConfig, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or x.shape[1:] != (cfg.frames, cfg.feature_dim, cfg.channels):
        raise DataError(
            f"expected samples shaped ({cfg.frames}, {cfg.feature_dim}, "
            f"{cfg.channels}), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NumericalError("non-finite model input")
    return x


def spectral_block(tape: Tape, p: dict[str, Tensor], cfg: ModelConfig,
                   x: Tensor) -> tuple[Tensor, list[Tensor]]:
    """Shared encoder over each frame's 2f band-feature tokens (dim C)."""
    z = tape.add(x, p["spectral.pos"])
    attns: list[Tensor] = []
    for layer in range(cfg.spectral_layers):
        z, a = encoder_layer(tape, p, f"spectral.l{layer}", z,
                             cfg.spectral_heads)
        attns.extend(a)
    return z, attns


def spatial_block(tape: Tape, p: dict[str, Tensor], cfg: ModelConfig,
                  x: Tensor, skip_encoder: bool = False
                  ) -> tuple[Tensor, list[Tensor]]:
    """Per-frame transpose to channel tokens (dim 2f), then shared encoder."""
    z = tape.transpose(x)
    if skip_encoder:
        return z, []
    z = tape.add(z, p["spatial.pos"])
    attns: list[Tensor] = []
    for layer in range(cfg.spatial_layers):
        z, a = encoder_layer(tape, p, f"spatial.l{layer}", z,
                             cfg.spatial_heads)
        attns.extend(a)
    return z, attns


def temporal_block(tape: Tape, p: dict[str, Tensor], cfg: ModelConfig,
                   x: Tensor, uniform: bool = False
                   ) -> tuple[Tensor, Tensor]:
    """Soft-attention pooling over frames.

    Flattens each frame, scores it with a single learned linear map, and
    returns the attention-weighted frame sum plus the weights. With
    uniform=True (or a zero score map) this is exactly mean pooling.
    """
    b, f = x.data.shape[0], cfg.frames
    flat = tape.reshape(x, (b, f, cfg.flat_dim))
    if uniform:
        weights = Tensor(np.full((b, f), 1.0 / f), name="uniform_weights")
    else:
        scores = tape.add(tape.matmul(flat, p["temporal.score.w"]),
                          p["temporal.score.b"])
        weights = tape.softmax(tape.reshape(scores, (b, f)))
    pooled = tape.matmul(tape.reshape(weights, (b, 1, f)), flat)
    return tape.reshape(pooled, (b, cfg.flat_dim)), weights


def classify(tape: Tape, p: dict[str, Tensor], x: Tensor) -> Tensor:
    return tape.add(tape.matmul(x, p["classifier.w"]), p["classifier.b"])


def forward(tape: Tape, p: dict[str, Tensor], cfg: ModelConfig,
            x: np.ndarray, remove: str | None = None) -> tuple[Tensor, dict]:
    """Full forward pass on a (B, F, 2f, C) batch; returns (logits, aux).

    remove drops one block for ablation runs: "spectral" bypasses the
    spectral encoder and its positional map, "spatial" keeps only the
    transpose, "temporal" pools frames uniformly.

    aux carries the spatial-block output tensor (attribution reads its
    gradient) and every attention matrix for inspection.
    """
    if remove is not None and remove not in ABLATABLE_BLOCKS:
        raise DataError(f"unknown block to remove: {remove!r}")
    data = _check_input(cfg, x)
    inp = Tensor(data, name="input")
    if remove == "spectral":
        z, spec_attn = inp, []
    else:
        z, spec_attn = spectral_block(tape, p, cfg, inp)
    z, spat_attn = spatial_block(tape, p, cfg, z,
                                 skip_encoder=(remove == "spatial"))
    spatial_out = z
    pooled, weights = temporal_block(tape, p, cfg, z,
                                     uniform=(remove == "temporal"))
    logits = classify(tape, p, pooled)
    aux = {
        "input": inp,
        "spatial_out": spatial_out,
        "temporal_weights": weights,
        "spectral_attention": spec_attn,
        "spatial_attention": spat_attn,
    }
    return logits, aux


def predict(params: dict[str, np.ndarray], cfg: ModelConfig, x: np.ndarray,
            remove: str | None = None, batch_size: int = 256) -> np.ndarray:
    """Class predictions for samples (N, F, 2f, C); plain argmax over logits."""
    x = _check_input(cfg, x)
    out = np.empty(x.shape[0], dtype=np.int64)
    for lo in range(0, x.shape[0], batch_size):
        hi = min(lo + batch_size, x.shape[0])
        logits, _ = forward(Tape(), wrap_params(params), cfg, x[lo:hi], remove)
        out[lo:hi] = np.argmax(logits.data, axis=-1)
    return out


def forward_flops(cfg: ModelConfig) -> int:
    """2 x multiply-adds of every matmul in one single-sample forward pass."""
    tape = Tape()
    x = np.zeros((1, cfg.frames, cfg.feature_dim, cfg.channels))
    forward(tape, wrap_params(init_params(cfg)), cfg, x)
    return tape.matmul_flops()
