"""Patch tokenization for 512-sample windows: the embedding stem, hierarchical
patch merging/splitting, the cyclic half-patch shift, and the output head.

Stage s covers patches of 32 * 2^s samples, so the token count follows
16 -> 8 -> 4 -> 2 -> 1 while token_count * patch_size stays 512.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ParameterError, StateError
from .preprocessing import WINDOW_SAMPLES


@dataclass(frozen=True)
class StageConfig:
    """Geometry and width settings shared by encoder and decoder."""

    patch_sizes: tuple = (32, 64, 128, 256, 512)
    depths: tuple = (2, 2, 6, 6, 2)
    d_model: int = 64
    heads: int = 4
    stem_channels: int = 8
    stem_kernel: int = 7
    mlp_ratio: int = 4
    shifted: bool = True

    def __post_init__(self):
        object.__setattr__(self, "patch_sizes", tuple(int(p) for p in self.patch_sizes))
        object.__setattr__(self, "depths", tuple(int(d) for d in self.depths))
        if len(self.patch_sizes) != len(self.depths) or not self.patch_sizes:
            raise ParameterError("patch_sizes and depths must be non-empty and equal-length")
        if WINDOW_SAMPLES % self.patch_sizes[0] != 0:
            raise ParameterError(f"initial patch size {self.patch_sizes[0]} must divide {WINDOW_SAMPLES}")
        for a, b in zip(self.patch_sizes, self.patch_sizes[1:]):
            if b != 2 * a:
                raise ParameterError(f"patch sizes must double per stage, got {self.patch_sizes}")
        if self.patch_sizes[-1] > WINDOW_SAMPLES:
            raise ParameterError(f"final patch size exceeds the {WINDOW_SAMPLES}-sample window")
        for d in self.depths:
            if d <= 0 or d % 2 != 0:
                raise ParameterError(f"stage depths must be positive and even, got {self.depths}")
        if self.d_model % self.heads != 0:
            raise ParameterError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if self.stem_kernel % 2 == 0:
            raise ParameterError(f"stem kernel must be odd, got {self.stem_kernel}")

    @property
    def n_stages(self):
        return len(self.patch_sizes)

    def token_count(self, stage):
        return WINDOW_SAMPLES // self.patch_sizes[stage]

    def fixed_patch_variant(self, patch_size):
        """Single-stage, unshifted baseline at the same total depth."""
        if WINDOW_SAMPLES % patch_size != 0:
            raise ParameterError(f"fixed patch size {patch_size} must divide {WINDOW_SAMPLES}")
        return replace(
            self,
            patch_sizes=(patch_size,),
            depths=(sum(self.depths),),
            shifted=False,
        )


@dataclass
class TokenSequence:
    """Embedded patch tokens for one stage; tokens are (batch, count, dim)."""

    tokens: Tensor
    stage_index: int
    patch_size: int
    shifted: bool = False

    def __post_init__(self):
        if self.tokens.ndim != 3:
            raise StateError(f"token tensor must be (batch, count, dim), got {self.tokens.shape}")
        if self.token_count * self.patch_size != WINDOW_SAMPLES:
            raise StateError(
                f"{self.token_count} tokens x {self.patch_size} samples != {WINDOW_SAMPLES}"
            )

    @property
    def token_count(self):
        return self.tokens.shape[1]

    @property
    def d_model(self):
        return self.tokens.shape[2]


# ---------------------------------------------------------------------------
# sample-axis geometry (pure index arithmetic, used by the contract tests)


def shift_offset(patch_size):
    return patch_size // 2


def rotate_samples(values, patch_size):
    """Rotate the sample axis so shifted patches start half a patch later."""
    return np.roll(np.asarray(values), -shift_offset(patch_size), axis=-1)


def unrotate_samples(values, patch_size):
    return np.roll(np.asarray(values), shift_offset(patch_size), axis=-1)


def patch_index_ranges(length, patch_size, shifted=False):
    """Sample indices covered by each patch; shifted partitions wrap cyclically."""
    idx = np.arange(length)
    if shifted:
        idx = np.roll(idx, -shift_offset(patch_size))
    return idx.reshape(length // patch_size, patch_size)


# ---------------------------------------------------------------------------
# token-axis shift. Above the raw-sample level a half-patch rotation is not
# expressible on whole tokens, so the shift becomes a one-token rotation with
# the wrap-around token landing last; attention blocks add a learned seam
# marker there. With a single token the rotation degenerates to the identity.

TOKEN_SHIFT = 1


def roll_tokens(x: Tensor, shift: int) -> Tensor:
    return ad.roll(x, shift, axis=1)


def cyclic_shift(seq: TokenSequence) -> TokenSequence:
    if seq.shifted:
        raise StateError("sequence is already shifted")
    return replace(seq, tokens=roll_tokens(seq.tokens, -TOKEN_SHIFT), shifted=True)


def cyclic_unshift(seq: TokenSequence) -> TokenSequence:
    if not seq.shifted:
        raise StateError("sequence is not shifted")
    return replace(seq, tokens=roll_tokens(seq.tokens, TOKEN_SHIFT), shifted=False)


def seam_table(token_count, marker: Tensor) -> Tensor:
    """(token_count, d) table that adds `marker` to the wrap-around (last) token."""
    d = marker.shape[-1]
    row = ad.reshape(marker, (1, d))
    if token_count == 1:
        return row
    zeros = Tensor(np.zeros((token_count - 1, d), dtype=marker.dtype.type))
    return ad.concat([zeros, row], axis=0)


# ---------------------------------------------------------------------------
# parameterized token ops


def embed_window(x, stem_w, stem_b, proj_w, proj_b, pos, patch_size) -> TokenSequence:
    """Conv stem, patch partition, linear projection, positional embedding.

    x: (batch, 512) Tensor or array. Produces the stage-0 TokenSequence.
    """
    x = ad.as_tensor(x)
    if x.ndim == 1:
        x = ad.reshape(x, (1, x.shape[0]))
    batch, length = x.shape
    if length != WINDOW_SAMPLES:
        raise StateError(f"embed expects {WINDOW_SAMPLES}-sample windows, got {length}")
    n_tokens = length // patch_size
    stem_channels = stem_w.shape[0]
    h = ad.conv1d(ad.reshape(x, (batch, 1, length)), stem_w, stem_b)  # (B, C, L)
    h = ad.transpose(h, (0, 2, 1))  # (B, L, C) time-major
    h = ad.reshape(h, (batch, n_tokens, patch_size * stem_channels))
    tokens = ad.linear(h, proj_w, proj_b)
    tokens = ad.embedding_add(tokens, pos)
    return TokenSequence(tokens=tokens, stage_index=0, patch_size=patch_size)


def merge_tokens(seq: TokenSequence, w, b, pos_next) -> TokenSequence:
    """Fuse adjacent token pairs, halving the count and doubling the patch size."""
    n = seq.token_count
    if n < 2:
        raise StateError("stage exhausted: cannot merge a single token")
    if n % 2 != 0:
        raise StateError(f"cannot merge an odd token count {n}")
    batch, _, d = seq.tokens.shape
    paired = ad.reshape(seq.tokens, (batch, n // 2, 2 * d))
    tokens = ad.linear(paired, w, b)
    tokens = ad.embedding_add(tokens, pos_next)
    return TokenSequence(
        tokens=tokens,
        stage_index=seq.stage_index + 1,
        patch_size=seq.patch_size * 2,
        shifted=seq.shifted,
    )


def split_tokens(seq: TokenSequence, w, b) -> TokenSequence:
    """Expand each token into two, inverting the merge geometry."""
    if seq.stage_index < 1:
        raise StateError("already at stage 0: cannot split further")
    batch, n, d = seq.tokens.shape
    wide = ad.linear(seq.tokens, w, b)  # (B, n, 2d)
    tokens = ad.reshape(wide, (batch, 2 * n, d))
    return TokenSequence(
        tokens=tokens,
        stage_index=seq.stage_index - 1,
        patch_size=seq.patch_size // 2,
        shifted=seq.shifted,
    )


def depatchify(seq: TokenSequence, head_w, head_b) -> Tensor:
    """Project stage-0 tokens back to a (batch, 512) waveform."""
    if seq.stage_index != 0:
        raise StateError(f"depatchify needs stage 0, got stage {seq.stage_index}")
    if seq.shifted:
        raise StateError("depatchify needs an unshifted sequence")
    batch, n, _ = seq.tokens.shape
    per_patch = ad.linear(seq.tokens, head_w, head_b)  # (B, n, patch)
    return ad.reshape(per_patch, (batch, n * seq.patch_size))
