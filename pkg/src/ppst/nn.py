"""Minimal neural-network layers on numpy arrays with explicit backward passes.

Every layer exposes ``forward(x) -> (y, cache)`` and ``backward(dy, cache) -> dx``;
``backward`` accumulates parameter gradients into ``Param.grad``. Caches are passed
explicitly so forward-only inference is stateless and safe to run concurrently.
All math runs in float64; checkpoints store float32 (see artifacts.py).
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from .errors import ConfigurationError


class Param:
    """A named tensor with an accumulated gradient."""

    __slots__ = ("value", "grad")

    def __init__(self, value):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad[...] = 0.0

    @property
    def size(self):
        return self.value.size


def fan_in_uniform(rng, shape, fan_in):
    """Standard fan-in-scaled uniform init, U(-1/sqrt(fan_in), +1/sqrt(fan_in))."""
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


# ---------------------------------------------------------------------------
# activations


def _tanh_fwd(x):
    y = np.tanh(x)
    return y, y


def _tanh_bwd(dy, y):
    return dy * (1.0 - y * y)


def _relu_fwd(x):
    return np.maximum(x, 0.0), x


def _relu_bwd(dy, x):
    return dy * (x > 0.0)


def _gelu_fwd(x):
    y = 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))
    return y, x


def _gelu_bwd(dy, x):
    cdf = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return dy * (cdf + x * pdf)


ACTIVATIONS = {
    "tanh": (_tanh_fwd, _tanh_bwd),
    "relu": (_relu_fwd, _relu_bwd),
    "gelu": (_gelu_fwd, _gelu_bwd),
}


def get_activation(name):
    if name not in ACTIVATIONS:
        raise ConfigurationError(f"unknown activation {name!r}; known: {sorted(ACTIVATIONS)}")
    return ACTIVATIONS[name]


# ---------------------------------------------------------------------------
# layers


class Linear:
    def __init__(self, d_in, d_out, rng):
        self.w = Param(fan_in_uniform(rng, (d_in, d_out), d_in))
        self.b = Param(np.zeros(d_out))

    def forward(self, x):
        return x @ self.w.value + self.b.value, x

    def backward(self, dy, x):
        d_in = self.w.value.shape[0]
        d_out = self.w.value.shape[1]
        self.w.grad += x.reshape(-1, d_in).T @ dy.reshape(-1, d_out)
        self.b.grad += dy.reshape(-1, d_out).sum(axis=0)
        return dy @ self.w.value.T

    def params(self, prefix):
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}


class LayerNorm:
    def __init__(self, dim, eps=1e-5):
        self.gain = Param(np.ones(dim))
        self.bias = Param(np.zeros(dim))
        self.eps = eps

    def forward(self, x):
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = xc * inv
        y = xhat * self.gain.value + self.bias.value
        return y, (xhat, inv)

    def backward(self, dy, cache):
        xhat, inv = cache
        self.gain.grad += (dy * xhat).reshape(-1, xhat.shape[-1]).sum(axis=0)
        self.bias.grad += dy.reshape(-1, xhat.shape[-1]).sum(axis=0)
        dxhat = dy * self.gain.value
        mean_dxhat = dxhat.mean(axis=-1, keepdims=True)
        mean_dxhat_xhat = (dxhat * xhat).mean(axis=-1, keepdims=True)
        return inv * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)

    def params(self, prefix):
        return {f"{prefix}.gain": self.gain, f"{prefix}.bias": self.bias}


class CausalSelfAttention:
    """Multi-head self-attention with a causal mask, no dropout."""

    def __init__(self, d_model, n_head, rng):
        if d_model % n_head != 0:
            raise ConfigurationError(f"d_model {d_model} not divisible by n_head {n_head}")
        self.n_head = n_head
        self.d_head = d_model // n_head
        self.qkv = Linear(d_model, 3 * d_model, rng)
        self.proj = Linear(d_model, d_model, rng)

    def _split(self, x):
        # (B, T, D) -> (B, H, T, dh)
        b, t, _ = x.shape
        return x.reshape(b, t, self.n_head, self.d_head).transpose(0, 2, 1, 3)

    def _merge(self, x):
        b, h, t, dh = x.shape
        return x.transpose(0, 2, 1, 3).reshape(b, t, h * dh)

    def forward(self, x):
        b, t, d = x.shape
        qkv, qkv_cache = self.qkv.forward(x)
        q, k, v = (self._split(a) for a in np.split(qkv, 3, axis=-1))
        scores = q @ k.transpose(0, 1, 3, 2) / math.sqrt(self.d_head)
        mask = np.triu(np.ones((t, t), dtype=bool), k=1)
        scores[..., mask] = -np.inf
        scores -= scores.max(axis=-1, keepdims=True)
        attn = np.exp(scores)
        attn /= attn.sum(axis=-1, keepdims=True)
        ctx = self._merge(attn @ v)
        y, proj_cache = self.proj.forward(ctx)
        return y, (qkv_cache, q, k, v, attn, proj_cache)

    def backward(self, dy, cache):
        qkv_cache, q, k, v, attn, proj_cache = cache
        dctx = self._split(self.proj.backward(dy, proj_cache))
        dattn = dctx @ v.transpose(0, 1, 3, 2)
        dv = attn.transpose(0, 1, 3, 2) @ dctx
        dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
        dq = dscores @ k / math.sqrt(self.d_head)
        dk = dscores.transpose(0, 1, 3, 2) @ q / math.sqrt(self.d_head)
        dqkv = np.concatenate([self._merge(a) for a in (dq, dk, dv)], axis=-1)
        return self.qkv.backward(dqkv, qkv_cache)

    def params(self, prefix):
        return {**self.qkv.params(f"{prefix}.qkv"), **self.proj.params(f"{prefix}.proj")}


class Mlp:
    def __init__(self, d_model, d_ff, rng, activation="gelu"):
        self.fc = Linear(d_model, d_ff, rng)
        self.out = Linear(d_ff, d_model, rng)
        self.act_fwd, self.act_bwd = get_activation(activation)

    def forward(self, x):
        h, fc_cache = self.fc.forward(x)
        a, act_cache = self.act_fwd(h)
        y, out_cache = self.out.forward(a)
        return y, (fc_cache, act_cache, out_cache)

    def backward(self, dy, cache):
        fc_cache, act_cache, out_cache = cache
        da = self.out.backward(dy, out_cache)
        dh = self.act_bwd(da, act_cache)
        return self.fc.backward(dh, fc_cache)

    def params(self, prefix):
        return {**self.fc.params(f"{prefix}.fc"), **self.out.params(f"{prefix}.out")}


class TransformerBlock:
    """Pre-norm block: x + attn(ln1(x)), then + mlp(ln2(.))."""

    def __init__(self, d_model, n_head, d_ff, rng):
        self.ln1 = LayerNorm(d_model)
        self.attn = CausalSelfAttention(d_model, n_head, rng)
        self.ln2 = LayerNorm(d_model)
        self.mlp = Mlp(d_model, d_ff, rng)

    def forward(self, x):
        n1, ln1_cache = self.ln1.forward(x)
        a, attn_cache = self.attn.forward(n1)
        h = x + a
        n2, ln2_cache = self.ln2.forward(h)
        m, mlp_cache = self.mlp.forward(n2)
        return h + m, (ln1_cache, attn_cache, ln2_cache, mlp_cache)

    def backward(self, dy, cache):
        ln1_cache, attn_cache, ln2_cache, mlp_cache = cache
        dn2 = self.mlp.backward(dy, mlp_cache)
        dh = dy + self.ln2.backward(dn2, ln2_cache)
        dn1 = self.attn.backward(dh, attn_cache)
        return dh + self.ln1.backward(dn1, ln1_cache)

    def params(self, prefix):
        return {
            **self.ln1.params(f"{prefix}.ln1"),
            **self.attn.params(f"{prefix}.attn"),
            **self.ln2.params(f"{prefix}.ln2"),
            **self.mlp.params(f"{prefix}.mlp"),
        }


# ---------------------------------------------------------------------------
# loss


def masked_cross_entropy(logits, targets, mask):
    """Next-token cross-entropy, averaged per example then over examples.

    The batch loss is the mean over examples of each example's mean CE across
    its supervised positions (mask > 0). Examples with no supervised position
    are excluded from the mean. Returns (loss, dloss/dlogits).
    """
    b, t, v = logits.shape
    shifted = logits - logits.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - logz
    safe_targets = np.clip(targets, 0, v - 1)
    nll = -np.take_along_axis(logp, safe_targets[..., None], axis=-1)[..., 0]

    mask = mask.astype(np.float64)
    per_row = mask.sum(axis=1)
    live = per_row > 0
    n_live = int(live.sum())
    if n_live == 0:
        raise ConfigurationError("cross-entropy batch has no supervised positions")
    weights = np.zeros_like(mask)
    weights[live] = mask[live] / per_row[live, None] / n_live
    loss = float((nll * weights).sum())

    probs = np.exp(logp)
    dlogits = probs * weights[..., None]
    np.subtract.at(dlogits, (np.arange(b)[:, None], np.arange(t)[None, :], safe_targets),
                   weights)
    return loss, dlogits


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Adam with the usual defaults; updates only the params it was given."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.value) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.value) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            mhat = self.m[k] / b1c
            vhat = self.v[k] / b2c
            p.value -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def param_count(params):
    return sum(p.size for p in params.values())


class freeze_params:
    """Context manager marking arrays read-only; any in-place update raises."""

    def __init__(self, params):
        self.values = [p.value for p in params.values()]
        self.saved = []

    def __enter__(self):
        self.saved = [v.flags.writeable for v in self.values]
        for v in self.values:
            v.flags.writeable = False
        return self

    def __exit__(self, *exc):
        for v, w in zip(self.values, self.saved):
            v.flags.writeable = w
        return False
