"""Multimodal classifier: the PPG window and its reconstructed ECG are
embedded as two 16-token groups with additive modality embeddings, a learned
class token is prepended, and a single-stage shifted-patch encoder feeds a
projection head on the final class-token state.

The class token is pinned: cyclic shifts rotate only the 32 waveform tokens.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, InputError, NumericError, ParameterError
from .metrics import per_class_accuracy
from .model import TrainSchedule, _self_block, reconstruct
from .optim import ParamStore, adam_step, trunc_normal
from .patches import embed_window
from .preprocessing import WINDOW_SAMPLES
from .seeding import substream

INIT_STD = 0.02

ABLATION_VARIANTS = ("ppg", "ecg", "recon", "ppg+ecg", "ppg+recon")


@dataclass(frozen=True)
class ClassifierConfig:
    labels: tuple
    modalities: tuple = ("ppg", "ecg")
    d_model: int = 32
    heads: int = 4
    depth: int = 4
    patch_size: int = 32
    stem_channels: int = 8
    stem_kernel: int = 7
    mlp_ratio: int = 4
    shifted: bool = True

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "modalities", tuple(self.modalities))
        if len(self.labels) < 2 or len(set(self.labels)) != len(self.labels):
            raise ParameterError(f"need at least two distinct labels, got {self.labels}")
        if len(self.modalities) not in (1, 2):
            raise ParameterError(f"classifier takes 1 or 2 modalities, got {self.modalities}")
        if self.depth < 0 or self.depth % 2 != 0:
            raise ParameterError(f"depth must be even and non-negative, got {self.depth}")
        if self.d_model % self.heads != 0:
            raise ParameterError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if WINDOW_SAMPLES % self.patch_size != 0:
            raise ParameterError(f"patch size {self.patch_size} must divide {WINDOW_SAMPLES}")
        if self.stem_kernel % 2 == 0:
            raise ParameterError(f"stem kernel must be odd, got {self.stem_kernel}")

    @property
    def n_classes(self):
        return len(self.labels)

    @property
    def tokens_per_modality(self):
        return WINDOW_SAMPLES // self.patch_size

    @property
    def fused_length(self):
        return 1 + self.tokens_per_modality * len(self.modalities)

    def label_index(self, label):
        try:
            return self.labels.index(label)
        except ValueError:
            raise InputError(f"label {label!r} not in configured set {self.labels}") from None


def build_classifier_params(cfg: ClassifierConfig, seed: int, dtype=np.float32) -> ParamStore:
    rng = substream(seed, "init")
    store = ParamStore()
    d = cfg.d_model

    def w(name, *shape):
        store.add(name, trunc_normal(rng, shape, INIT_STD, dtype))

    def z(name, *shape):
        store.add(name, np.zeros(shape, dtype=dtype))

    def ones(name, *shape):
        store.add(name, np.ones(shape, dtype=dtype))

    for m in cfg.modalities:
        w(f"stem.{m}.w", cfg.stem_channels, 1, cfg.stem_kernel)
        z(f"stem.{m}.b", cfg.stem_channels)
        w(f"embed.{m}.w", cfg.patch_size * cfg.stem_channels, d)
        z(f"embed.{m}.b", d)
        w(f"pos.{m}", cfg.tokens_per_modality, d)
    w("modality", len(cfg.modalities), d)
    w("cls", 1, d)
    for i in range(cfg.depth):
        prefix = f"blk{i}"
        ones(f"{prefix}.ln1.g", d)
        z(f"{prefix}.ln1.b", d)
        for nm in ("wq", "wk", "wv", "wo"):
            w(f"{prefix}.attn.{nm}", d, d)
        for nm in ("bq", "bk", "bv", "bo"):
            z(f"{prefix}.attn.{nm}", d)
        if cfg.shifted and i % 2 == 1:
            w(f"{prefix}.seam", d)
        ones(f"{prefix}.ln2.g", d)
        z(f"{prefix}.ln2.b", d)
        hidden = cfg.mlp_ratio * d
        w(f"{prefix}.mlp.w1", d, hidden)
        z(f"{prefix}.mlp.b1", hidden)
        w(f"{prefix}.mlp.w2", hidden, d)
        z(f"{prefix}.mlp.b2", d)
    w("head.w", d, cfg.n_classes)
    z("head.b", cfg.n_classes)
    return store


@dataclass
class MultimodalModel:
    config: ClassifierConfig
    params: ParamStore
    seed: int = 0

    @classmethod
    def build(cls, config: ClassifierConfig, seed: int = 0, dtype=np.float32):
        return cls(config=config, params=build_classifier_params(config, seed, dtype), seed=seed)

    def copy(self, dtype=None):
        return MultimodalModel(config=self.config, params=self.params.copy(dtype), seed=self.seed)


def _as_batches(cfg: ClassifierConfig, inputs):
    arrays = []
    batch = None
    for name, x in zip(cfg.modalities, inputs):
        arr = np.asarray(x, dtype=np.float32)
        if arr.ndim == 1:
            arr = arr[None, :]
        if arr.ndim != 2 or arr.shape[1] != WINDOW_SAMPLES:
            raise InputError(f"{name} input must be (n, {WINDOW_SAMPLES}), got {arr.shape}")
        if batch is None:
            batch = arr.shape[0]
        elif arr.shape[0] != batch:
            raise InputError("modality inputs disagree on batch size")
        arrays.append(arr)
    if len(arrays) != len(cfg.modalities):
        raise InputError(f"expected {len(cfg.modalities)} modality inputs, got {len(arrays)}")
    return arrays, batch


def fuse(model: MultimodalModel, *inputs) -> Tensor:
    """Embed each modality into tokens and prepend the class token.

    Returns (batch, 1 + 16 * n_modalities, d_model) fused tokens.
    """
    cfg = model.config
    store = model.params
    arrays, batch = _as_batches(cfg, inputs)
    groups = []
    for mi, (m, arr) in enumerate(zip(cfg.modalities, arrays)):
        seq = embed_window(
            Tensor(arr),
            store[f"stem.{m}.w"],
            store[f"stem.{m}.b"],
            store[f"embed.{m}.w"],
            store[f"embed.{m}.b"],
            store[f"pos.{m}"],
            cfg.patch_size,
        )
        mod_row = ad.slice_axis(store["modality"], 0, mi, mi + 1)  # (1, d) broadcasts
        groups.append(ad.add(seq.tokens, mod_row))
    cls_base = Tensor(np.zeros((batch, 1, cfg.d_model), dtype=store["cls"].dtype))
    cls_tokens = ad.add(cls_base, store["cls"])
    return ad.concat([cls_tokens] + groups, axis=1)


def class_logits(model: MultimodalModel, *inputs, recorder=None) -> Tensor:
    cfg = model.config
    store = model.params
    x = fuse(model, *inputs)
    for i in range(cfg.depth):
        shifted = cfg.shifted and i % 2 == 1
        x = _self_block(
            x, store, f"blk{i}", cfg.heads, shifted, recorder, stage=0, pin_first=True
        )
    cls_state = ad.reshape(ad.slice_axis(x, 1, 0, 1), (x.shape[0], cfg.d_model))
    return ad.linear(cls_state, store["head.w"], store["head.b"])


def classify(model: MultimodalModel, *inputs) -> np.ndarray:
    """Softmax class distribution per window; rows sum to 1."""
    with ad.no_grad():
        logits = class_logits(model, *inputs)
        probs = ad.softmax(logits, axis=-1).data
    if not np.isfinite(probs).all():
        raise NumericError("classify produced non-finite probabilities")
    return probs


def predict_labels(model: MultimodalModel, *inputs) -> list:
    probs = classify(model, *inputs)
    return [model.config.labels[i] for i in probs.argmax(axis=1)]


def train_classifier(inputs, labels, model: MultimodalModel, sched: TrainSchedule,
                     weight_classes=False, log=None):
    """Cross-entropy training; deterministic under the schedule seed.

    inputs: tuple of per-modality (n, 512) arrays matching the config's
    modality slots. labels: per-window label values from the configured set.
    """
    cfg = model.config
    arrays, n = _as_batches(cfg, inputs)
    y = np.array([cfg.label_index(lab) for lab in labels], dtype=np.int64)
    if y.shape[0] != n:
        raise InputError(f"{n} windows but {y.shape[0]} labels")
    if len(set(y.tolist())) < 2:
        raise InputError("training needs at least two classes present")
    if weight_classes:
        counts = np.bincount(y, minlength=cfg.n_classes).astype(np.float64)
        class_w = np.where(counts > 0, n / (cfg.n_classes * np.maximum(counts, 1)), 0.0)
    else:
        class_w = None
    rng = substream(sched.seed, "shuffle")
    trace = []
    for epoch in range(sched.epochs):
        perm = rng.permutation(n)
        epoch_losses = []
        for lo in range(0, n, sched.batch_size):
            idx = perm[lo : lo + sched.batch_size]
            batch_inputs = [arr[idx] for arr in arrays]
            logits = class_logits(model, *batch_inputs)
            weights = class_w[y[idx]] if class_w is not None else None
            loss = ad.cross_entropy(logits, y[idx], sample_weights=weights)
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
# ablation over signal-input variants


def _variant_inputs(variant, ppg, ecg, ecg_hat):
    if variant == "ppg":
        return ("ppg",), (ppg,)
    if variant == "ecg":
        return ("ecg",), (ecg,)
    if variant == "recon":
        return ("ecg",), (ecg_hat,)
    if variant == "ppg+ecg":
        return ("ppg", "ecg"), (ppg, ecg)
    if variant == "ppg+recon":
        return ("ppg", "ecg"), (ppg, ecg_hat)
    raise ConfigError(f"unknown ablation variant {variant!r}; pick from {ABLATION_VARIANTS}")


def ablation_run(dataset, variants, base_cfg: ClassifierConfig, sched: TrainSchedule,
                 recon_model=None, log=None):
    """Train and evaluate one classifier per signal-input variant.

    Returns {variant: {label: per-class accuracy}} on the test split; variants
    that consume reconstructed ECG require a trained reconstructor.
    """
    variants = tuple(variants)
    for v in variants:
        if v not in ABLATION_VARIANTS:
            raise ConfigError(f"unknown ablation variant {v!r}; pick from {ABLATION_VARIANTS}")
    if any("recon" in v for v in variants) and recon_model is None:
        raise ConfigError("variants using reconstructed ECG need a reconstructor checkpoint")
    ppg_tr, ecg_tr, y_tr = dataset.subset("train")
    ppg_te, ecg_te, y_te = dataset.subset("test")
    if ppg_tr.shape[0] == 0 or ppg_te.shape[0] == 0:
        raise InputError("ablation needs non-empty train and test splits")
    hat_tr = reconstruct(ppg_tr, recon_model) if recon_model is not None else None
    hat_te = reconstruct(ppg_te, recon_model) if recon_model is not None else None
    results = {}
    for v in variants:
        names, train_inputs = _variant_inputs(v, ppg_tr, ecg_tr, hat_tr)
        _, test_inputs = _variant_inputs(v, ppg_te, ecg_te, hat_te)
        cfg = replace(base_cfg, modalities=names)
        model = MultimodalModel.build(cfg, seed=sched.seed)
        train_classifier(train_inputs, y_tr, model, sched)
        preds = predict_labels(model, *test_inputs)
        results[v] = per_class_accuracy(preds, y_te, cfg.labels)
        if log is not None:
            log(v, results[v])
    return results


def format_ablation_table(results, labels) -> str:
    """Table-style CSV: one row per class, one column per variant."""
    variants = list(results.keys())
    lines = ["class," + ",".join(variants)]
    for lab in labels:
        cells = [f"{results[v][lab]:.4f}" for v in variants]
        lines.append(f"{lab}," + ",".join(cells))
    return "\n".join(lines) + "\n"
