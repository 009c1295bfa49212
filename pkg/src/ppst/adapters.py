"""Residual style adapters over a frozen base LM, plus the full fine-tune variant.

One adapter block sits on top of each transformer layer:

    out = h + up_proj(act(down_proj(layernorm(h))))

The up projection starts at zero, so a fresh adapter set is exactly the
identity and the composed model reproduces the plain LM. Training one set per
genre on style-filtered passages gives a swappable, plug-and-play stylistic
LM; the base weights are never touched. `train_full_finetune` covers the
non-styled comparison system (all LM parameters trained, no adapters).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import nn
from .artifacts import (fingerprint_json, load_tensors, read_manifest, save_tensors,
                        write_manifest)
from .errors import CompatibilityError, ConfigurationError, TrainingDiverged
from .lm import CausalTransformerLM, teacher_forced_batch
from .nn import masked_cross_entropy


@dataclass
class AdapterConfig:
    bottleneck_dim: int
    activation: str = "relu"
    init: str = "zero_up_projection"

    def __post_init__(self):
        if self.bottleneck_dim < 1:
            raise ConfigurationError("bottleneck_dim must be >= 1")
        if self.init != "zero_up_projection":
            raise ConfigurationError(f"unknown adapter init {self.init!r}")
        nn.get_activation(self.activation)


def default_adapter_config(lm_hidden_dim):
    """Bottleneck of lm_hidden_dim / 8 (at least 1), rectifier activation."""
    return AdapterConfig(bottleneck_dim=max(1, lm_hidden_dim // 8))


class AdapterBlock:
    def __init__(self, lm_hidden_dim, config: AdapterConfig, rng):
        if config.bottleneck_dim >= lm_hidden_dim:
            raise ConfigurationError("bottleneck_dim must be < lm_hidden_dim")
        self.ln = nn.LayerNorm(lm_hidden_dim)
        self.down = nn.Linear(lm_hidden_dim, config.bottleneck_dim, rng)
        self.up = nn.Linear(config.bottleneck_dim, lm_hidden_dim, rng)
        self.up.w.value[...] = 0.0   # start as the identity map
        self.up.b.value[...] = 0.0
        self.act_fwd, self.act_bwd = nn.get_activation(config.activation)

    def forward(self, h):
        n, ln_cache = self.ln.forward(h)
        d, down_cache = self.down.forward(n)
        a, act_cache = self.act_fwd(d)
        u, up_cache = self.up.forward(a)
        return h + u, (ln_cache, down_cache, act_cache, up_cache)

    def backward(self, dy, cache):
        ln_cache, down_cache, act_cache, up_cache = cache
        da = self.up.backward(dy, up_cache)
        dd = self.act_bwd(da, act_cache)
        dn = self.down.backward(dd, down_cache)
        return dy + self.ln.backward(dn, ln_cache)

    def params(self, prefix):
        return {**self.ln.params(f"{prefix}.ln"),
                **self.down.params(f"{prefix}.down"),
                **self.up.params(f"{prefix}.up")}


def adapter_forward(h, block):
    """Apply one adapter block position-wise to a hidden-state array."""
    out, _ = block.forward(np.asarray(h, dtype=np.float64))
    return out


class StyleAdapterSet:
    """One adapter block per LM layer, trained for a single style."""

    def __init__(self, style_id, blocks, lm_fingerprint, config: AdapterConfig, seed=0):
        self.style_id = style_id
        self.blocks = list(blocks)
        self.lm_fingerprint = lm_fingerprint
        self.config = config
        self.seed = seed

    @classmethod
    def create(cls, style_id, base_lm, config=None, seed=0):
        config = config or default_adapter_config(base_lm.config.d_model)
        rng = np.random.default_rng(seed)
        blocks = [AdapterBlock(base_lm.config.d_model, config, rng)
                  for _ in base_lm.blocks]
        return cls(style_id, blocks, base_lm.fingerprint(), config, seed)

    def params(self):
        out = {}
        for i, block in enumerate(self.blocks):
            out.update(block.params(f"adapter{i}"))
        return out

    def param_count(self):
        return nn.param_count(self.params())

    def save(self, directory, extra_manifest=None):
        directory = Path(directory)
        save_tensors(directory, {k: p.value for k, p in self.params().items()})
        manifest = {"kind": "style_adapter_set", "style_id": self.style_id,
                    "lm_fingerprint": self.lm_fingerprint, "seed": self.seed,
                    "n_blocks": len(self.blocks), "config": asdict(self.config)}
        manifest.update(extra_manifest or {})
        write_manifest(directory, manifest)
        return directory

    @classmethod
    def load(cls, directory, base_lm):
        manifest = read_manifest(directory)
        if manifest is None or manifest.get("kind") != "style_adapter_set":
            raise ConfigurationError(f"{directory} is not an adapter checkpoint")
        config = AdapterConfig(**manifest["config"])
        if manifest["n_blocks"] != len(base_lm.blocks):
            raise CompatibilityError(
                f"adapter set has {manifest['n_blocks']} blocks, LM has "
                f"{len(base_lm.blocks)} layers")
        adapter_set = cls.create(manifest["style_id"], base_lm, config,
                                 seed=manifest.get("seed", 0))
        adapter_set.lm_fingerprint = manifest["lm_fingerprint"]
        tensors = load_tensors(directory)
        for name, param in adapter_set.params().items():
            param.value[...] = tensors[name]
        return adapter_set


@dataclass
class StyledLanguageModel:
    """Lightweight view composing a base LM with at most one adapter set."""

    base_lm: CausalTransformerLM
    adapter_set: StyleAdapterSet = None
    mode: str = "plain"          # adapter | full_finetune | plain

    def __post_init__(self):
        if self.mode not in ("adapter", "full_finetune", "plain"):
            raise ConfigurationError(f"unknown mode {self.mode!r}")
        if self.mode == "adapter":
            if self.adapter_set is None:
                raise ConfigurationError("adapter mode requires an adapter set")
            if self.adapter_set.lm_fingerprint != self.base_lm.fingerprint():
                raise CompatibilityError(
                    "adapter set was trained against a different base LM "
                    f"({self.adapter_set.lm_fingerprint[:12]} != "
                    f"{self.base_lm.fingerprint()[:12]})")
        elif self.adapter_set is not None:
            raise ConfigurationError(f"mode {self.mode!r} does not take an adapter set")

    @property
    def adapters(self):
        return self.adapter_set.blocks if self.mode == "adapter" else None

    @property
    def style(self):
        if self.mode == "adapter":
            return self.adapter_set.style_id
        return "non-styled" if self.mode == "full_finetune" else "plain"

    @property
    def eos_id(self):
        return self.base_lm.eos_id

    @property
    def embed_dim(self):
        return self.base_lm.config.d_model

    @property
    def vocab_size(self):
        return self.base_lm.config.vocab_size

    @property
    def context_limit(self):
        return self.base_lm.config.max_seq_len

    def detach(self):
        """Plain view of the same base LM (exact base behavior)."""
        return StyledLanguageModel(self.base_lm, None, "plain")

    def next_token_logits(self, prefix_matrix, token_ids):
        """Logits for the next token given an optional visual prefix.

        Without a prefix the sequence is anchored on the bos embedding, which
        is also how text-only training sequences start.
        """
        if prefix_matrix is None:
            rows = [self.base_lm.embed_tokens([self.base_lm.tokenizer.bos_id])]
        else:
            prefix_matrix = np.asarray(prefix_matrix, dtype=np.float64)
            if prefix_matrix.ndim != 2 or prefix_matrix.shape[1] != self.embed_dim:
                raise ConfigurationError(
                    f"prefix shape {prefix_matrix.shape} does not match LM embedding "
                    f"width {self.embed_dim}")
            rows = [prefix_matrix]
        if len(token_ids):
            rows.append(self.base_lm.embed_tokens(list(token_ids)))
        embeds = np.concatenate(rows, axis=0)[None, :, :]
        logits, _ = self.base_lm.forward_embeds(embeds, self.adapters)
        return logits[0, -1]

    def perplexity(self, token_lists, batch_size=16):
        from .lm import perplexity
        return perplexity(self.base_lm, token_lists, self.adapters, batch_size)

    def decode(self, token_ids):
        return self.base_lm.tokenizer.decode(token_ids)

    def manifest(self):
        out = {"lm_id": self.base_lm.lm_id, "lm_fingerprint": self.base_lm.fingerprint(),
               "mode": self.mode, "style": self.style}
        if self.mode == "adapter":
            from .artifacts import tensors_fingerprint
            out["adapter_fingerprint"] = tensors_fingerprint(self.adapter_set.params())
        return out


def attach(base_lm, adapter_set):
    """Compose base LM + adapter set into a stylistic LM view (non-destructive)."""
    return StyledLanguageModel(base_lm, adapter_set, "adapter")


# ---------------------------------------------------------------------------
# training


@dataclass
class AdapterTrainConfig:
    max_epochs: int = 10
    learning_rate: float = 1e-3
    batch_size: int = 8
    max_seq_len: int = 512
    seed: int = 0
    val_fraction: float = 0.1
    patience: int = 2            # early stop after this many non-improving epochs

    def __post_init__(self):
        if self.max_epochs < 0 or self.batch_size < 1 or self.max_seq_len < 2:
            raise ConfigurationError("bad epoch/batch/sequence configuration")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning rate must be positive")
        if not (0.0 <= self.val_fraction < 1.0):
            raise ConfigurationError("val_fraction must be in [0, 1)")


def _token_lists(passages, tokenizer):
    return [tokenizer.encode(p.text) for p in passages]


def _train_text_model(token_lists, lm, trainable_params, adapters, cfg, label):
    """Shared loop for adapter training and full fine-tuning."""
    rng = np.random.default_rng(cfg.seed)
    n_val = int(len(token_lists) * cfg.val_fraction)
    order = rng.permutation(len(token_lists))
    val = [token_lists[i] for i in order[:n_val]]
    train = [token_lists[i] for i in order[n_val:]]
    if not train:
        raise ConfigurationError(f"{label}: no training sequences left")

    max_len = min(cfg.max_seq_len, lm.config.max_seq_len)
    optimizer = nn.Adam(trainable_params, lr=cfg.learning_rate)
    adapter_params = list(trainable_params.values())
    loss_log = []
    best_val = math.inf
    stale = 0
    for epoch in range(cfg.max_epochs):
        epoch_losses = []
        for start in range(0, len(train), cfg.batch_size):
            chunk = train[start: start + cfg.batch_size]
            inputs, targets, mask = teacher_forced_batch(chunk, lm.tokenizer, max_len)
            for p in adapter_params:
                p.zero_grad()
            for p in lm.params().values():
                p.zero_grad()
            logits, cache = lm.forward_tokens(inputs, adapters)
            loss, dlogits = masked_cross_entropy(logits, targets, mask)
            if not math.isfinite(loss):
                raise TrainingDiverged(f"{label}: non-finite loss at epoch {epoch}")
            lm.backward_tokens(dlogits, cache, adapters)
            optimizer.step()
            epoch_losses.append(loss)
        entry = {"epoch": epoch, "train_loss": float(np.mean(epoch_losses))}
        if val:
            from .lm import sequence_nll
            nll, count = sequence_nll(lm, val, adapters, cfg.batch_size)
            entry["val_loss"] = nll / max(count, 1)
            if entry["val_loss"] < best_val - 1e-9:
                best_val = entry["val_loss"]
                stale = 0
            else:
                stale += 1
        loss_log.append(entry)
        if val and stale >= cfg.patience:
            break
    return loss_log


def train_adapter(passages, base_lm, cfg: AdapterTrainConfig, style=None,
                  adapter_config=None):
    """Train one style's adapter set on its passages; base LM stays frozen.

    `style` defaults to the first genre of the first passage. Every passage
    must carry the style within its first three genre labels.
    """
    if not passages:
        raise ConfigurationError("train_adapter requires a non-empty passage set")
    style = style or passages[0].genres[0]
    for p in passages:
        if style not in p.genres[:3]:
            raise ConfigurationError(
                f"passage from {p.source_title!r} does not carry style {style!r} "
                "in its first three genres")

    adapter_set = StyleAdapterSet.create(style, base_lm, adapter_config, seed=cfg.seed)
    token_lists = _token_lists(passages, base_lm.tokenizer)
    with nn.freeze_params(base_lm.params()):
        loss_log = _train_text_model(token_lists, base_lm, adapter_set.params(),
                                     adapter_set.blocks, cfg, f"adapter[{style}]")
    return adapter_set, loss_log


def train_full_finetune(passages, base_lm, cfg: AdapterTrainConfig):
    """Fine-tune every LM parameter on the whole book collection (non-styled).

    Works on a deep copy; the given base LM is left untouched. Returns
    (tuned_lm, loss_log).
    """
    if not passages:
        raise ConfigurationError("train_full_finetune requires a non-empty passage set")
    tuned = base_lm.clone()
    tuned.lm_id = f"{base_lm.lm_id}+book-finetune"
    token_lists = _token_lists(passages, tuned.tokenizer)
    if cfg.max_epochs == 0:
        return tuned, []
    loss_log = _train_text_model(token_lists, tuned, tuned.params(), None, cfg,
                                 "full-finetune")
    return tuned, loss_log


def train_on_texts(texts, lm, cfg: AdapterTrainConfig, label="text-corpus"):
    """Causal-LM training of every parameter of `lm` on raw texts, in place.

    Used to give a fresh toy LM its base language knowledge (e.g. caption
    text) before mapper or adapter training.
    """
    token_lists = [lm.tokenizer.encode(t) for t in texts]
    return _train_text_model(token_lists, lm, lm.params(), None, cfg, label)


def adapter_data_fingerprint(passages):
    return fingerprint_json([[p.source_title, p.text] for p in passages])
