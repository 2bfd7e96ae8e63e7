"""Length-extrapolation machinery.

Two cooperating schemes extend a model past its trained context:

* YaRN-style rescaling interpolates rotary frequencies per dimension
  ("NTK-by-parts") and applies a logit temperature so attention entropy
  stays stable at long range.
* Dual-chunk attention remaps relative positions so that every effective
  position any branch feeds into RoPE stays below twice the chunk size,
  while sequences that fit in one chunk reproduce vanilla attention exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .layers import (
    MASK_SENTINEL,
    AttentionParams,
    RopeParams,
    apply_rope,
    as_f32,
    expand_kv,
    gqa_attention,
    masked_softmax_heads,
    rope_freqs,
    _check_qkv_shapes,
)


@dataclass(frozen=True)
class YarnParams:
    """Frequency-interpolation parameters.

    ``scale`` is target context over native context. Dimensions whose full
    rotation period is short relative to ``native_ctx`` (fast dimensions,
    ramp value 1) keep their frequency; slow dimensions are divided by
    ``scale``; the ramp between ``beta_slow`` and ``beta_fast`` blends the
    two regimes.
    """

    scale: float
    native_ctx: int
    beta_fast: float = 32.0
    beta_slow: float = 1.0
    mscale_coeff: float = 0.1

    def __post_init__(self):
        if self.scale < 1:
            raise ParameterError(f"scale must be >= 1, got {self.scale}")
        if self.native_ctx < 1:
            raise ParameterError(f"native_ctx must be >= 1, got {self.native_ctx}")
        if not (self.beta_fast > self.beta_slow > 0):
            raise ParameterError(
                f"need beta_fast > beta_slow > 0, got {self.beta_fast}/{self.beta_slow}"
            )


@dataclass(frozen=True)
class DcaParams:
    """Chunk size and the local window kept exact across chunk boundaries.

    ``local_window`` defaults to half the chunk size.
    """

    chunk_size: int
    local_window: int | None = None

    def __post_init__(self):
        if self.chunk_size < 1:
            raise ParameterError(f"chunk_size must be >= 1, got {self.chunk_size}")
        if self.local_window is None:
            object.__setattr__(self, "local_window", max(1, self.chunk_size // 2))
        if not (0 < self.local_window <= self.chunk_size):
            raise ParameterError(
                f"local_window must be in (0, chunk_size], got "
                f"{self.local_window} with chunk_size {self.chunk_size}"
            )


def yarn_adjust(rope: RopeParams, yarn: YarnParams) -> tuple[np.ndarray, float]:
    """Rescaled inverse frequencies and the attention-logit multiplier.

    For each dimension with wavelength lambda = 2 pi / inv_freq, the ratio
    rho = native_ctx / lambda is ramped through
    gamma = clamp((rho - beta_slow) / (beta_fast - beta_slow), 0, 1) and the
    frequency becomes inv_freq * (gamma + (1 - gamma) / scale). The returned
    multiplier (mscale_coeff * ln(scale) + 1)**2 is meant for the
    ``scale_mult`` argument of attention.

    ``scale == 1`` returns the base frequencies bit-identically with
    multiplier 1.0.
    """
    if yarn.scale < 1:
        raise ParameterError(f"scale must be >= 1, got {yarn.scale}")
    inv_freq = rope_freqs(rope)
    if yarn.scale == 1.0:
        return inv_freq, 1.0
    inv64 = inv_freq.astype(np.float64)
    wavelength = 2.0 * np.pi / inv64
    rho = yarn.native_ctx / wavelength
    gamma = np.clip(
        (rho - yarn.beta_slow) / (yarn.beta_fast - yarn.beta_slow), 0.0, 1.0
    )
    adjusted = inv64 * (gamma + (1.0 - gamma) / yarn.scale)
    attn_mult = (yarn.mscale_coeff * math.log(yarn.scale) + 1.0) ** 2
    return adjusted.astype(np.float32), attn_mult


def dca_relpos(i: int, j: int, dca: DcaParams) -> int:
    """Effective relative distance between query position i and key position j.

    Three branches: positions in the same chunk keep the true distance;
    a key in the immediately preceding chunk within ``local_window`` of the
    query also keeps the true distance (exact locality across the boundary);
    everything farther collapses to (chunk_size - 1) - (j mod chunk_size),
    as seen from a query pinned at the last intra-chunk index.
    """
    if j < 0:
        raise ParameterError(f"positions must be non-negative, got j={j}")
    if j > i:
        raise ParameterError(f"key position j={j} must not exceed query position i={i}")
    s_c = dca.chunk_size
    if i // s_c == j // s_c:
        return i - j
    if i // s_c == j // s_c + 1 and i - j <= dca.local_window:
        return i - j
    return (s_c - 1) - (j % s_c)


def dca_attention(
    q,
    k,
    v,
    params: AttentionParams,
    dca: DcaParams,
    rope: RopeParams,
    yarn: YarnParams | None = None,
) -> np.ndarray:
    """Causal grouped-query attention with dual-chunk position remapping.

    Keys are rotated once at positions j mod chunk_size. Queries are rotated
    three ways, at (i mod chunk_size), (i mod chunk_size) + chunk_size, and
    chunk_size - 1, realizing :func:`dca_relpos` for the intra-chunk,
    successive-chunk, and inter-chunk branches. Branch masks select one score
    per (i, j) pair, then a single causal softmax feeds the value
    aggregation, so each query row still carries a proper distribution.

    Sequences no longer than one chunk reduce exactly to
    :func:`gqa_attention`. When ``yarn`` is given, its rescaled frequencies
    and attention multiplier are used; the remapped position range
    2 * chunk_size must fit inside scale * native_ctx.
    """
    q = as_f32(q)
    k = as_f32(k)
    v = as_f32(v)
    _check_qkv_shapes(q, k, v, params)
    s_c = dca.chunk_size
    if yarn is not None:
        covered = yarn.scale * yarn.native_ctx
        if 2 * s_c > covered:
            raise ParameterError(
                f"dual-chunk positions reach {2 * s_c - 1} but the rescaled rotary "
                f"range covers only {covered:g} positions"
            )
        inv_freq, scale_mult = yarn_adjust(rope, yarn)
    else:
        inv_freq, scale_mult = rope_freqs(rope), 1.0

    seq = q.shape[1]
    if seq <= s_c:
        # Single chunk: all remapped positions equal the true ones.
        return gqa_attention(
            q, k, v, params, list(range(seq)), rope,
            scale_mult=scale_mult, inv_freq=inv_freq,
        )

    pos = np.arange(seq, dtype=np.int64)
    pos_mod = pos % s_c
    k_rot = apply_rope(k, pos_mod, inv_freq)
    q_intra = apply_rope(q, pos_mod, inv_freq)
    q_succ = apply_rope(q, pos_mod + s_c, inv_freq)
    q_inter = apply_rope(q, np.full(seq, s_c - 1, dtype=np.int64), inv_freq)

    g = params.group_size
    k_full = expand_kv(k_rot, g).transpose(0, 2, 1)
    v_full = expand_kv(v, g)
    scale = np.float32(scale_mult / math.sqrt(params.head_dim))
    scores_intra = np.matmul(q_intra, k_full) * scale
    scores_succ = np.matmul(q_succ, k_full) * scale
    scores_inter = np.matmul(q_inter, k_full) * scale

    chunk_q = pos[:, None] // s_c
    chunk_k = pos[None, :] // s_c
    dist = pos[:, None] - pos[None, :]
    intra = chunk_q == chunk_k
    succ = (chunk_q == chunk_k + 1) & (dist <= dca.local_window)
    logits = np.where(intra, scores_intra, np.where(succ, scores_succ, scores_inter))
    logits[:, dist < 0] = MASK_SENTINEL
    probs = masked_softmax_heads(logits)
    out = np.matmul(probs, v_full)
    return out.transpose(1, 0, 2).reshape(seq, params.n_q_heads * params.head_dim)
