"""Trainable mapping network: image embedding -> fixed-length LM prefix.

A two-layer feed-forward net projects the frozen encoder's d_e-dimensional
embedding to prefix_length rows in the LM's input-embedding space. Training
maximizes caption likelihood through the frozen LM: the prefix is prepended
to the embedded caption tokens, loss is next-token cross-entropy on caption
positions only, and only mapper parameters are updated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import nn
from .artifacts import (fingerprint_json, load_tensors, read_manifest, save_tensors,
                        write_manifest)
from .encoding import VisualEmbedding
from .errors import ConfigurationError, TrainingDiverged
from .nn import masked_cross_entropy


@dataclass
class MapperConfig:
    input_dim: int
    lm_embed_dim: int
    hidden_dim: int = 512
    prefix_length: int = 10
    activation: str = "tanh"

    def __post_init__(self):
        for field in ("input_dim", "lm_embed_dim", "hidden_dim", "prefix_length"):
            if getattr(self, field) < 1:
                raise ConfigurationError(f"MapperConfig.{field} must be positive")
        nn.get_activation(self.activation)


@dataclass
class MapperTrainConfig:
    max_epochs: int = 10
    learning_rate: float = 1e-3
    batch_size: int = 8
    max_seq_len: int = 512
    seed: int = 0

    def __post_init__(self):
        if self.max_epochs < 1 or self.batch_size < 1 or self.max_seq_len < 2:
            raise ConfigurationError("epochs, batch size and max_seq_len must be positive")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning rate must be positive")


@dataclass
class VisualPrefix:
    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2:
            raise ConfigurationError("prefix must be a 2-D matrix")
        if not np.isfinite(self.matrix).all():
            raise ConfigurationError("prefix contains non-finite entries")

    @property
    def length(self):
        return self.matrix.shape[0]


class PrefixMapper:
    def __init__(self, config: MapperConfig, seed=0):
        self.config = config
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.fc1 = nn.Linear(config.input_dim, config.hidden_dim, rng)
        self.fc2 = nn.Linear(config.hidden_dim,
                             config.prefix_length * config.lm_embed_dim, rng)
        self.act_fwd, self.act_bwd = nn.get_activation(config.activation)

    def params(self):
        return {**self.fc1.params("fc1"), **self.fc2.params("fc2")}

    def forward_batch(self, x):
        """(B, input_dim) -> (B, prefix_length, lm_embed_dim), row-major reshape."""
        h, c1 = self.fc1.forward(x)
        a, ca = self.act_fwd(h)
        flat, c2 = self.fc2.forward(a)
        prefix = flat.reshape(x.shape[0], self.config.prefix_length,
                              self.config.lm_embed_dim)
        return prefix, (c1, ca, c2)

    def backward_batch(self, dprefix, cache):
        c1, ca, c2 = cache
        dflat = dprefix.reshape(dprefix.shape[0], -1)
        da = self.fc2.backward(dflat, c2)
        dh = self.act_bwd(da, ca)
        return self.fc1.backward(dh, c1)

    def map_prefix(self, embedding: VisualEmbedding) -> VisualPrefix:
        if embedding.dim != self.config.input_dim:
            raise ConfigurationError(
                f"embedding dim {embedding.dim} != mapper input_dim {self.config.input_dim}")
        prefix, _ = self.forward_batch(embedding.vector[None, :])
        return VisualPrefix(matrix=prefix[0])

    def save(self, directory, extra_manifest=None):
        directory = Path(directory)
        save_tensors(directory, {k: p.value for k, p in self.params().items()})
        manifest = {"kind": "prefix_mapper", "seed": self.seed,
                    "config": asdict(self.config)}
        manifest.update(extra_manifest or {})
        write_manifest(directory, manifest)
        return directory

    @classmethod
    def load(cls, directory):
        manifest = read_manifest(directory)
        if manifest is None or manifest.get("kind") != "prefix_mapper":
            raise ConfigurationError(f"{directory} is not a mapper checkpoint")
        mapper = cls(MapperConfig(**manifest["config"]), seed=manifest.get("seed", 0))
        tensors = load_tensors(directory)
        for name, param in mapper.params().items():
            param.value[...] = tensors[name]
        return mapper


def map_prefix(embedding, mapper):
    """Project one visual embedding into a fixed-length visual prefix."""
    return mapper.map_prefix(embedding)


# ---------------------------------------------------------------------------
# training


def build_prefix_batch(prefixes, caption_ids, lm):
    """Assemble (inputs_embeds, targets, mask) for prefix-conditioned captions.

    prefixes: (B, P, d); caption_ids: list of id lists, each ending in eos.
    Position P-1+i predicts caption token i; prefix positions carry no loss.
    """
    b, p, d = prefixes.shape
    t_cap = max(len(c) for c in caption_ids)
    embeds = np.zeros((b, p + t_cap - 1, d))
    embeds[:, :p, :] = prefixes
    targets = np.zeros((b, p + t_cap - 1), dtype=np.intp)
    mask = np.zeros((b, p + t_cap - 1))
    for i, cap in enumerate(caption_ids):
        if len(cap) > 1:
            embeds[i, p: p + len(cap) - 1, :] = lm.embed_tokens(cap[:-1])
        targets[i, p - 1: p - 1 + len(cap)] = cap
        mask[i, p - 1: p - 1 + len(cap)] = 1.0
    return embeds, targets, mask


def prefix_batch_loss(mapper, lm, embeddings, caption_ids, backward=False):
    """Loss of one batch; optionally backprop into the mapper parameters."""
    prefixes, mcache = mapper.forward_batch(embeddings)
    embeds, targets, mask = build_prefix_batch(prefixes, caption_ids, lm)
    logits, cache = lm.forward_embeds(embeds)
    loss, dlogits = masked_cross_entropy(logits, targets, mask)
    if backward:
        dembeds = lm.backward(dlogits, cache)
        mapper.backward_batch(dembeds[:, : prefixes.shape[1], :], mcache)
    return loss


def train_mapper(pairs, encoder, base_lm, cfg: MapperTrainConfig,
                 mapper_config: MapperConfig = None, embedding_cache=None):
    """Train the mapping network on image-caption pairs with the LM frozen.

    Returns (mapper, loss_log); loss_log has one {"epoch", "train_loss"} entry
    per epoch. Raises TrainingDiverged on a non-finite loss.
    """
    if not pairs:
        raise ConfigurationError("train_mapper requires a non-empty dataset")
    if mapper_config is None:
        mapper_config = MapperConfig(input_dim=encoder.embed_dim,
                                     lm_embed_dim=base_lm.config.d_model)
    if mapper_config.input_dim != encoder.embed_dim:
        raise ConfigurationError(
            f"mapper input_dim {mapper_config.input_dim} != encoder dim {encoder.embed_dim}")
    if mapper_config.lm_embed_dim != base_lm.config.d_model:
        raise ConfigurationError(
            f"mapper lm_embed_dim {mapper_config.lm_embed_dim} != LM d_model "
            f"{base_lm.config.d_model}")

    mapper = PrefixMapper(mapper_config, seed=cfg.seed)
    p = mapper_config.prefix_length
    max_total = min(cfg.max_seq_len, base_lm.config.max_seq_len)
    if max_total <= p:
        raise ConfigurationError("max_seq_len leaves no room for caption tokens")

    embeddings = np.zeros((len(pairs), encoder.embed_dim))
    captions = []
    for i, pair in enumerate(pairs):
        if embedding_cache is not None:
            embeddings[i] = embedding_cache.image_embedding(encoder, pair.image_ref).vector
        else:
            embeddings[i] = encoder.encode_image(pair.image_ref).vector
        cap = base_lm.tokenizer.encode(pair.caption_text, add_eos=True)
        captions.append(cap[: max_total - p])

    optimizer = nn.Adam(mapper.params(), lr=cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    loss_log = []
    with nn.freeze_params(base_lm.params()):
        for epoch in range(cfg.max_epochs):
            order = rng.permutation(len(pairs))
            epoch_losses = []
            for start in range(0, len(order), cfg.batch_size):
                idx = order[start: start + cfg.batch_size]
                optimizer.zero_grad()
                for lm_param in base_lm.params().values():
                    lm_param.zero_grad()
                loss = prefix_batch_loss(mapper, base_lm, embeddings[idx],
                                         [captions[i] for i in idx], backward=True)
                if not math.isfinite(loss):
                    raise TrainingDiverged(
                        f"non-finite mapper loss at epoch {epoch}, batch {start}")
                optimizer.step()
                epoch_losses.append(loss)
            loss_log.append({"epoch": epoch, "train_loss": float(np.mean(epoch_losses))})
    return mapper, loss_log


def mapper_data_fingerprint(pairs):
    return fingerprint_json([[p.image_ref, p.caption_text, p.split] for p in pairs])
