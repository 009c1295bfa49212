"""A small causal transformer language model in numpy.

Decoder-only, pre-norm, learned absolute positions, untied output head.
Backward passes are hand-written (see nn.py) so that training the prefix
mapper or adapters against a *frozen* copy of this model is exact and
finite-difference checkable. Adapter blocks, when supplied, run on top of
each transformer block's output.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import nn
from .artifacts import (load_tensors, read_manifest, save_tensors, strict_checksum,
                        tensors_fingerprint, write_manifest)
from .errors import ConfigurationError
from .tokenizer import WordTokenizer


@dataclass
class LmConfig:
    vocab_size: int
    n_layer: int = 2
    n_head: int = 2
    d_model: int = 32
    d_ff: int = 0          # 0 -> 4 * d_model
    max_seq_len: int = 128

    def __post_init__(self):
        if self.d_ff == 0:
            self.d_ff = 4 * self.d_model
        for field in ("vocab_size", "n_layer", "n_head", "d_model", "d_ff", "max_seq_len"):
            if getattr(self, field) < 1:
                raise ConfigurationError(f"LmConfig.{field} must be positive")


class CausalTransformerLM:
    def __init__(self, config: LmConfig, tokenizer: WordTokenizer, seed=0, lm_id=None):
        if tokenizer.vocab_size != config.vocab_size:
            raise ConfigurationError(
                f"tokenizer vocab {tokenizer.vocab_size} != config vocab {config.vocab_size}")
        self.config = config
        self.tokenizer = tokenizer
        self.seed = seed
        self.lm_id = lm_id or f"causal-lm-{config.n_layer}x{config.d_model}-s{seed}"
        rng = np.random.default_rng(seed)
        d = config.d_model
        self.tok_emb = nn.Param(nn.fan_in_uniform(rng, (config.vocab_size, d), d))
        self.pos_emb = nn.Param(nn.fan_in_uniform(rng, (config.max_seq_len, d), d))
        self.blocks = [nn.TransformerBlock(d, config.n_head, config.d_ff, rng)
                       for _ in range(config.n_layer)]
        self.ln_f = nn.LayerNorm(d)
        self.head = nn.Linear(d, config.vocab_size, rng)

    # -- parameters ---------------------------------------------------------

    def params(self):
        out = {"tok_emb": self.tok_emb, "pos_emb": self.pos_emb}
        for i, block in enumerate(self.blocks):
            out.update(block.params(f"block{i}"))
        out.update(self.ln_f.params("ln_f"))
        out.update(self.head.params("head"))
        return out

    def checksum(self):
        """Strict byte-level checksum of the in-memory parameters."""
        return strict_checksum(self.params())

    def fingerprint(self):
        """Canonical float32 fingerprint, stable across save/load round trips."""
        return tensors_fingerprint(self.params())

    @property
    def eos_id(self):
        return self.tokenizer.eos_id

    # -- forward / backward -------------------------------------------------

    def embed_tokens(self, ids):
        return self.tok_emb.value[np.asarray(ids, dtype=np.intp)]

    def forward_embeds(self, embeds, adapters=None):
        """embeds: (B, T, d_model) already in input-embedding space."""
        b, t, d = embeds.shape
        if t > self.config.max_seq_len:
            raise ConfigurationError(
                f"sequence length {t} exceeds max_seq_len {self.config.max_seq_len}")
        if adapters is not None and len(adapters) != len(self.blocks):
            raise ConfigurationError("one adapter block per transformer layer required")
        h = embeds + self.pos_emb.value[:t]
        caches = []
        for i, block in enumerate(self.blocks):
            h, c = block.forward(h)
            if adapters is not None:
                h, ac = adapters[i].forward(h)
            else:
                ac = None
            caches.append((c, ac))
        hn, ln_cache = self.ln_f.forward(h)
        logits, head_cache = self.head.forward(hn)
        return logits, (caches, ln_cache, head_cache)

    def backward(self, dlogits, cache, adapters=None):
        caches, ln_cache, head_cache = cache
        dh = self.ln_f.backward(self.head.backward(dlogits, head_cache), ln_cache)
        for i in reversed(range(len(self.blocks))):
            block_cache, adapter_cache = caches[i]
            if adapters is not None:
                dh = adapters[i].backward(dh, adapter_cache)
            dh = self.blocks[i].backward(dh, block_cache)
        # gradient w.r.t. the raw input embeddings (pos_emb grad accumulated here)
        self.pos_emb.grad[: dh.shape[1]] += dh.sum(axis=0)
        return dh

    def forward_tokens(self, ids, adapters=None):
        ids = np.asarray(ids, dtype=np.intp)
        if ids.ndim == 1:
            ids = ids[None, :]
        logits, cache = self.forward_embeds(self.embed_tokens(ids), adapters)
        return logits, (cache, ids)

    def backward_tokens(self, dlogits, cache, adapters=None):
        inner, ids = cache
        dembeds = self.backward(dlogits, inner, adapters)
        np.add.at(self.tok_emb.grad, ids, dembeds)
        return dembeds

    # -- persistence ---------------------------------------------------------

    def save(self, directory):
        directory = Path(directory)
        save_tensors(directory, {k: p.value for k, p in self.params().items()})
        self.tokenizer.save(directory / "vocab.json")
        write_manifest(directory, {
            "kind": "causal_lm",
            "lm_id": self.lm_id,
            "seed": self.seed,
            "config": asdict(self.config),
            "fingerprint": self.fingerprint(),
        })
        return directory

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        manifest = read_manifest(directory)
        if manifest is None or manifest.get("kind") != "causal_lm":
            raise ConfigurationError(f"{directory} is not a language-model checkpoint")
        tokenizer = WordTokenizer.load(directory / "vocab.json")
        config = LmConfig(**manifest["config"])
        model = cls(config, tokenizer, seed=manifest.get("seed", 0), lm_id=manifest["lm_id"])
        tensors = load_tensors(directory)
        for name, param in model.params().items():
            param.value[...] = tensors[name]
        return model

    def clone(self):
        """Deep copy with independent parameters."""
        twin = CausalTransformerLM(self.config, self.tokenizer, seed=self.seed,
                                   lm_id=self.lm_id)
        for name, param in twin.params().items():
            param.value[...] = self.params()[name].value
        return twin


# ---------------------------------------------------------------------------
# batching and evaluation helpers


def pad_batch(sequences, pad_id):
    """Right-pad variable-length id lists; returns (ids, lengths) arrays."""
    t = max(len(s) for s in sequences)
    ids = np.full((len(sequences), t), pad_id, dtype=np.intp)
    for i, s in enumerate(sequences):
        ids[i, : len(s)] = s
    lengths = np.array([len(s) for s in sequences])
    return ids, lengths


def teacher_forced_batch(token_lists, tokenizer, max_seq_len):
    """bos + tokens + eos, truncated; returns (input ids, target ids, loss mask)."""
    full = [[tokenizer.bos_id] + list(t)[: max_seq_len - 2] + [tokenizer.eos_id]
            for t in token_lists]
    inputs, lengths = pad_batch([f[:-1] for f in full], tokenizer.pad_id)
    targets, _ = pad_batch([f[1:] for f in full], tokenizer.pad_id)
    mask = (np.arange(inputs.shape[1])[None, :] < lengths[:, None]).astype(np.float64)
    return inputs, targets, mask


def sequence_nll(lm, token_lists, adapters=None, batch_size=16):
    """Total next-token negative log-likelihood and token count over sequences."""
    total_nll = 0.0
    total_tokens = 0
    for start in range(0, len(token_lists), batch_size):
        chunk = token_lists[start: start + batch_size]
        inputs, targets, mask = teacher_forced_batch(chunk, lm.tokenizer,
                                                     lm.config.max_seq_len)
        logits, _ = lm.forward_tokens(inputs, adapters)
        shifted = logits - logits.max(axis=-1, keepdims=True)
        logp = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        nll = -np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
        total_nll += float((nll * mask).sum())
        total_tokens += int(mask.sum())
    return total_nll, total_tokens


def perplexity(lm, token_lists, adapters=None, batch_size=16):
    """exp(mean NLL per token); lower is a better fit."""
    nll, count = sequence_nll(lm, token_lists, adapters, batch_size)
    return float(np.exp(nll / max(count, 1)))
