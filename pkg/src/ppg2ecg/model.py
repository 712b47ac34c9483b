"""Hierarchical shifted-patch encoder/decoder mapping a PPG window to an ECG
window estimate.

Encoder stages run pairs of plain and shifted attention blocks, merging
patches between stages (16 -> 8 -> 4 -> 2 -> 1 tokens); the decoder starts
from one learned query token and mirrors the hierarchy back up, cross-
attending to the matching encoder stage after each block pair. Decoding is
one-shot: the target waveform is only ever consumed by the loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError, InputError, NumericError, StateError
from .optim import ParamStore, adam_step, trunc_normal
from .patches import (
    TOKEN_SHIFT,
    StageConfig,
    TokenSequence,
    depatchify,
    embed_window,
    merge_tokens,
    roll_tokens,
    seam_table,
    split_tokens,
)
from .preprocessing import WINDOW_SAMPLES, SignalWindow
from .seeding import substream

INIT_STD = 0.02


# ---------------------------------------------------------------------------
# attention recording


@dataclass
class AttentionMap:
    """One head's attention weights from one block; rows sum to 1."""

    stage_index: int
    block_index: int
    head_index: int
    weights: np.ndarray


class AttentionRecorder:
    """Per-call buffer of attention maps; block ids follow forward order."""

    def __init__(self):
        self.maps: list[AttentionMap] = []
        self._next_block = 0

    def allocate_block(self):
        bid = self._next_block
        self._next_block += 1
        return bid

    def record(self, stage_index, block_index, weights):
        if weights.shape[0] != 1:
            raise StateError("attention recording expects a single-window batch")
        for h in range(weights.shape[1]):
            self.maps.append(
                AttentionMap(
                    stage_index=stage_index,
                    block_index=block_index,
                    head_index=h,
                    weights=np.array(weights[0, h], copy=True),
                )
            )


# ---------------------------------------------------------------------------
# parameter construction


def _dec_depth(config: StageConfig, stage):
    return config.depths[config.n_stages - 1 - stage]


def build_reconstructor_params(config: StageConfig, seed: int, dtype=np.float32) -> ParamStore:
    """Create all parameters in a fixed traversal order from the init substream."""
    rng = substream(seed, "init")
    store = ParamStore()
    d = config.d_model
    p0 = config.patch_sizes[0]
    c = config.stem_channels

    def w(name, *shape):
        store.add(name, trunc_normal(rng, shape, INIT_STD, dtype))

    def z(name, *shape):
        store.add(name, np.zeros(shape, dtype=dtype))

    def ones(name, *shape):
        store.add(name, np.ones(shape, dtype=dtype))

    def block(prefix, shifted):
        ones(f"{prefix}.ln1.g", d)
        z(f"{prefix}.ln1.b", d)
        for nm in ("wq", "wk", "wv", "wo"):
            w(f"{prefix}.attn.{nm}", d, d)
        for nm in ("bq", "bk", "bv", "bo"):
            z(f"{prefix}.attn.{nm}", d)
        if shifted:
            w(f"{prefix}.seam", d)
        ones(f"{prefix}.ln2.g", d)
        z(f"{prefix}.ln2.b", d)
        hidden = config.mlp_ratio * d
        w(f"{prefix}.mlp.w1", d, hidden)
        z(f"{prefix}.mlp.b1", hidden)
        w(f"{prefix}.mlp.w2", hidden, d)
        z(f"{prefix}.mlp.b2", d)

    def cross(prefix):
        ones(f"{prefix}.ln.g", d)
        z(f"{prefix}.ln.b", d)
        for nm in ("wq", "wk", "wv", "wo"):
            w(f"{prefix}.{nm}", d, d)
        for nm in ("bq", "bk", "bv", "bo"):
            z(f"{prefix}.{nm}", d)

    w("stem.w", c, 1, config.stem_kernel)
    z("stem.b", c)
    w("embed.w", p0 * c, d)
    z("embed.b", d)
    for s in range(config.n_stages):
        w(f"enc.s{s}.pos", config.token_count(s), d)
        for i in range(config.depths[s]):
            block(f"enc.s{s}.b{i}", shifted=config.shifted and i % 2 == 1)
    for s in range(config.n_stages - 1):
        w(f"enc.merge.s{s}.w", 2 * d, d)
        z(f"enc.merge.s{s}.b", d)
    w("dec.query", config.token_count(config.n_stages - 1), d)
    for s in range(config.n_stages - 1, -1, -1):
        w(f"dec.s{s}.pos", config.token_count(s), d)
        for i in range(_dec_depth(config, s)):
            block(f"dec.s{s}.b{i}", shifted=config.shifted and i % 2 == 1)
        for j in range(_dec_depth(config, s) // 2):
            cross(f"dec.s{s}.x{j}")
        if s > 0:
            w(f"dec.split.s{s}.w", d, 2 * d)
            z(f"dec.split.s{s}.b", 2 * d)
    w("head.w", d, p0)
    z("head.b", p0)
    return store


def expected_param_count(config: StageConfig) -> int:
    """Closed-form parameter count; must match the built store exactly."""
    d = config.d_model
    hidden = config.mlp_ratio * d
    p0 = config.patch_sizes[0]
    c = config.stem_channels
    block = 2 * d + 4 * (d * d + d) + 2 * d + (d * hidden + hidden) + (hidden * d + d)
    seam = d
    cross = 2 * d + 4 * (d * d + d)
    total = c * config.stem_kernel + c  # stem
    total += p0 * c * d + d  # embed projection
    for s in range(config.n_stages):
        n_shifted = config.depths[s] // 2 if config.shifted else 0
        total += config.token_count(s) * d  # encoder positions
        total += config.depths[s] * block + n_shifted * seam
    total += (config.n_stages - 1) * (2 * d * d + d)  # merges
    total += config.token_count(config.n_stages - 1) * d  # decoder queries
    for s in range(config.n_stages):
        dd = _dec_depth(config, s)
        n_shifted = dd // 2 if config.shifted else 0
        total += config.token_count(s) * d  # decoder positions
        total += dd * block + n_shifted * seam
        total += (dd // 2) * cross
    total += (config.n_stages - 1) * (d * 2 * d + 2 * d)  # splits
    total += d * p0 + p0  # output head
    return total


@dataclass
class ReconstructorModel:
    """Stage configuration plus the parameter store that realizes it."""

    config: StageConfig
    params: ParamStore
    seed: int = 0

    @classmethod
    def build(cls, config: StageConfig, seed: int = 0, dtype=np.float32):
        return cls(config=config, params=build_reconstructor_params(config, seed, dtype), seed=seed)

    def copy(self, dtype=None):
        return ReconstructorModel(config=self.config, params=self.params.copy(dtype), seed=self.seed)


# ---------------------------------------------------------------------------
# forward pieces


def _mha(q_in, kv_in, store, prefix, heads, recorder=None, stage=None, block_id=None):
    q = ad.linear(q_in, store[f"{prefix}.wq"], store[f"{prefix}.bq"])
    k = ad.linear(kv_in, store[f"{prefix}.wk"], store[f"{prefix}.bk"])
    v = ad.linear(kv_in, store[f"{prefix}.wv"], store[f"{prefix}.bv"])
    b, nq, d = q.shape
    nk = k.shape[1]
    hd = d // heads
    qh = ad.transpose(ad.reshape(q, (b, nq, heads, hd)), (0, 2, 1, 3))
    kh = ad.transpose(ad.reshape(k, (b, nk, heads, hd)), (0, 2, 1, 3))
    vh = ad.transpose(ad.reshape(v, (b, nk, heads, hd)), (0, 2, 1, 3))
    scores = ad.scale(ad.matmul(qh, ad.swap_last(kh)), 1.0 / math.sqrt(hd))
    weights = ad.softmax(scores, axis=-1)
    if recorder is not None:
        recorder.record(stage, block_id, weights.data)
    out = ad.matmul(weights, vh)
    out = ad.reshape(ad.transpose(out, (0, 2, 1, 3)), (b, nq, d))
    return ad.linear(out, store[f"{prefix}.wo"], store[f"{prefix}.bo"])


def _rotate_for_shift(h, seam, pin_first):
    """Rotate the token ring one position and mark the wrap-around token.

    With pin_first the leading (class) token stays at position 0 and only the
    remaining ring rotates; the assertion makes the pinning observable."""
    if pin_first:
        head = ad.slice_axis(h, 1, 0, 1)
        ring = ad.slice_axis(h, 1, 1, h.shape[1])
        ring = roll_tokens(ring, -TOKEN_SHIFT)
        ring = ad.add(ring, seam_table(ring.shape[1], seam))
        out = ad.concat([head, ring], axis=1)
        assert np.array_equal(out.data[:, 0], h.data[:, 0])
        return out
    h = roll_tokens(h, -TOKEN_SHIFT)
    return ad.add(h, seam_table(h.shape[1], seam))


def _rotate_back(a, pin_first):
    if pin_first:
        head = ad.slice_axis(a, 1, 0, 1)
        ring = roll_tokens(ad.slice_axis(a, 1, 1, a.shape[1]), TOKEN_SHIFT)
        return ad.concat([head, ring], axis=1)
    return roll_tokens(a, TOKEN_SHIFT)


def _self_block(x, store, prefix, heads, shifted, recorder=None, stage=None, pin_first=False):
    """Pre-norm attention block; shifted variant rotates tokens by one position
    and marks the wrap-around token with a learned seam embedding before
    attending, then rotates back so the residual stays aligned."""
    block_id = recorder.allocate_block() if recorder is not None else None
    h = ad.layer_norm(x, store[f"{prefix}.ln1.g"], store[f"{prefix}.ln1.b"])
    if shifted:
        h = _rotate_for_shift(h, store[f"{prefix}.seam"], pin_first)
    a = _mha(h, h, store, f"{prefix}.attn", heads, recorder, stage, block_id)
    if shifted:
        a = _rotate_back(a, pin_first)
    x = ad.add(x, a)
    h2 = ad.layer_norm(x, store[f"{prefix}.ln2.g"], store[f"{prefix}.ln2.b"])
    m = ad.linear(h2, store[f"{prefix}.mlp.w1"], store[f"{prefix}.mlp.b1"])
    m = ad.linear(ad.gelu(m), store[f"{prefix}.mlp.w2"], store[f"{prefix}.mlp.b2"])
    return ad.add(x, m)


def _cross_block(x, memory, store, prefix, heads, recorder=None, stage=None):
    block_id = recorder.allocate_block() if recorder is not None else None
    h = ad.layer_norm(x, store[f"{prefix}.ln.g"], store[f"{prefix}.ln.b"])
    a = _mha(h, memory, store, prefix, heads, recorder, stage, block_id)
    return ad.add(x, a)


def pa_spa_pair(seq: TokenSequence, store, prefix, pair_index, config: StageConfig, recorder=None):
    """One plain-attention block followed by its shifted counterpart."""
    if seq.shifted:
        raise StateError("block pair expects an unshifted sequence")
    i = 2 * pair_index
    x = _self_block(
        seq.tokens, store, f"{prefix}.b{i}", config.heads, False, recorder, seq.stage_index
    )
    x = _self_block(
        x, store, f"{prefix}.b{i + 1}", config.heads, config.shifted, recorder, seq.stage_index
    )
    return TokenSequence(
        tokens=x, stage_index=seq.stage_index, patch_size=seq.patch_size, shifted=False
    )


def _as_batch_tensor(window, dtype=None):
    if isinstance(window, Tensor):
        out = window if window.ndim == 2 else ad.reshape(window, (1, window.shape[0]))
        if out.shape[-1] != WINDOW_SAMPLES:
            raise DimensionError(f"expected {WINDOW_SAMPLES}-sample windows, got {window.shape}")
        return out
    if isinstance(window, SignalWindow):
        arr = window.values[None, :]
    else:
        arr = np.asarray(window)
        if arr.ndim == 1:
            arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[-1] != WINDOW_SAMPLES:
        raise DimensionError(f"expected {WINDOW_SAMPLES}-sample windows, got {arr.shape}")
    return Tensor(arr, dtype=dtype)


def encode(window, model: ReconstructorModel, recorder=None) -> list[TokenSequence]:
    """Run all encoder stages; returns each stage's output for cross-attention."""
    cfg = model.config
    store = model.params
    x = _as_batch_tensor(window, dtype=store["stem.w"].dtype)
    seq = embed_window(
        x,
        store["stem.w"],
        store["stem.b"],
        store["embed.w"],
        store["embed.b"],
        store["enc.s0.pos"],
        cfg.patch_sizes[0],
    )
    memories = []
    for s in range(cfg.n_stages):
        if s > 0:
            seq = merge_tokens(
                seq,
                store[f"enc.merge.s{s - 1}.w"],
                store[f"enc.merge.s{s - 1}.b"],
                store[f"enc.s{s}.pos"],
            )
        for j in range(cfg.depths[s] // 2):
            seq = pa_spa_pair(seq, store, f"enc.s{s}", j, cfg, recorder)
        memories.append(seq)
    return memories


def decode(memories: list[TokenSequence], model: ReconstructorModel, recorder=None) -> TokenSequence:
    """One-shot decoding from a learned query, expanding back to stage 0."""
    cfg = model.config
    store = model.params
    if len(memories) != cfg.n_stages:
        raise DimensionError(f"expected {cfg.n_stages} stage memories, got {len(memories)}")
    for s, mem in enumerate(memories):
        if mem.token_count != cfg.token_count(s):
            raise DimensionError(
                f"memory {s} has {mem.token_count} tokens, expected {cfg.token_count(s)}"
            )
    batch = memories[0].tokens.shape[0]
    top = cfg.n_stages - 1
    n_queries = cfg.token_count(top)
    base = Tensor(np.zeros((batch, n_queries, cfg.d_model), dtype=store["dec.query"].dtype))
    x = ad.add(base, store["dec.query"])
    seq = TokenSequence(tokens=x, stage_index=top, patch_size=cfg.patch_sizes[top])
    for s in range(top, -1, -1):
        seq = TokenSequence(
            tokens=ad.embedding_add(seq.tokens, store[f"dec.s{s}.pos"]),
            stage_index=s,
            patch_size=cfg.patch_sizes[s],
        )
        for j in range(_dec_depth(cfg, s) // 2):
            seq = pa_spa_pair(seq, store, f"dec.s{s}", j, cfg, recorder)
            crossed = _cross_block(
                seq.tokens, memories[s].tokens, store, f"dec.s{s}.x{j}", cfg.heads, recorder, s
            )
            seq = TokenSequence(tokens=crossed, stage_index=s, patch_size=cfg.patch_sizes[s])
        if s > 0:
            seq = split_tokens(seq, store[f"dec.split.s{s}.w"], store[f"dec.split.s{s}.b"])
    return seq


def forward_waveform(model: ReconstructorModel, window, recorder=None) -> Tensor:
    seq = decode(encode(window, model, recorder), model, recorder)
    return depatchify(seq, model.params["head.w"], model.params["head.b"])


def reconstruct(window, model: ReconstructorModel) -> np.ndarray:
    """Target-free inference: a 512-sample ECG estimate per input window."""
    single = isinstance(window, SignalWindow) or np.asarray(window).ndim == 1
    with ad.no_grad():
        out = forward_waveform(model, window).data
    if not np.isfinite(out).all():
        raise NumericError("reconstruct produced non-finite output")
    return out[0] if single else out


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainSchedule:
    lr: float = 1e-4
    epochs: int = 50
    batch_size: int = 8
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def train_reconstructor(x, y, model: ReconstructorModel, sched: TrainSchedule, log=None):
    """Adam on the summed absolute reconstruction error (batch-averaged).

    x, y: (n, 512) aligned PPG inputs and ECG targets. Returns the per-epoch
    mean loss trace; the model is updated in place.
    """
    x = np.asarray(x, dtype=np.float32)
    y = np.asarray(y, dtype=np.float32)
    if x.ndim != 2 or x.shape != y.shape or x.shape[1] != WINDOW_SAMPLES:
        raise InputError(f"need aligned (n, {WINDOW_SAMPLES}) arrays, got {x.shape} and {y.shape}")
    n = x.shape[0]
    if n < 1:
        raise InputError("training needs at least one aligned pair")
    rng = substream(sched.seed, "shuffle")
    trace = []
    for epoch in range(sched.epochs):
        perm = rng.permutation(n)
        epoch_losses = []
        for lo in range(0, n, sched.batch_size):
            idx = perm[lo : lo + sched.batch_size]
            xb = Tensor(x[idx])
            yb = Tensor(y[idx])
            pred = forward_waveform(model, xb)
            loss = ad.scale(ad.l1_loss(pred, yb), 1.0 / len(idx))
            value = float(loss.data)
            if not math.isfinite(value):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, batch {lo // sched.batch_size}; "
                    f"parameter norm {model.params.global_norm():.3e}"
                )
            if sched.lr > 0:
                loss.backward()
                adam_step(model.params, sched.lr, sched.beta1, sched.beta2, sched.eps)
            epoch_losses.append(value)
        trace.append(float(np.mean(epoch_losses)))
        if log is not None:
            log(epoch, trace[-1])
    return trace


# ---------------------------------------------------------------------------
# attention extraction


def extract_attention(model: ReconstructorModel, window, scope="last") -> list[AttentionMap]:
    """Forward one window with recording on.

    scope="last" keeps only the final attention block of the pass (the
    decoder's last cross-attention); scope="all" returns every block's maps.
    """
    if scope not in ("last", "all"):
        raise InputError(f"scope must be 'last' or 'all', got {scope!r}")
    recorder = AttentionRecorder()
    with ad.no_grad():
        forward_waveform(model, window, recorder)
    if scope == "all":
        return recorder.maps
    last_block = max(m.block_index for m in recorder.maps)
    return [m for m in recorder.maps if m.block_index == last_block]


def attention_rows(maps) -> list[tuple]:
    """Long-form (stage, block, head, query, key, weight) rows for CSV export."""
    rows = []
    for m in maps:
        nq, nk = m.weights.shape
        for qi in range(nq):
            for ki in range(nk):
                rows.append(
                    (m.stage_index, m.block_index, m.head_index, qi, ki, float(m.weights[qi, ki]))
                )
    return rows
