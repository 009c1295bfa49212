import pytest

from ppst.lm import CausalTransformerLM, LmConfig
from ppst.tokenizer import WordTokenizer


def make_tiny_lm(n_words=8, n_layer=2, n_head=2, d_model=8, d_ff=16,
                 max_seq_len=32, seed=1):
    tok = WordTokenizer([f"w{i}" for i in range(n_words)])
    cfg = LmConfig(vocab_size=tok.vocab_size, n_layer=n_layer, n_head=n_head,
                   d_model=d_model, d_ff=d_ff, max_seq_len=max_seq_len)
    return CausalTransformerLM(cfg, tok, seed=seed)


@pytest.fixture
def tiny_lm():
    return make_tiny_lm()


def central_difference(loss_fn, array, index, h=1e-6):
    """Two-point central finite difference of loss_fn wrt array[index]."""
    old = array[index]
    array[index] = old + h
    up = loss_fn()
    array[index] = old - h
    down = loss_fn()
    array[index] = old
    return (up - down) / (2 * h)


def relative_error(a, b, floor=1e-8):
    return abs(a - b) / max(abs(a), abs(b), floor)


def grad_close(fd, analytic, rel_tol=1e-4, abs_tol=1e-7):
    """Combined tolerance; abs_tol sits above central-difference rounding noise
    so exact-zero gradients (e.g. attention key bias under softmax
    shift-invariance) compare cleanly."""
    return abs(fd - analytic) <= rel_tol * max(abs(fd), abs(analytic)) + abs_tol


class RandomTableLM:
    """Deterministic toy model: next-token logits depend on (position, last token)."""

    def __init__(self, vocab, max_len, rng, spread=1.0, eos_id=0):
        self.table = rng.standard_normal((max_len + 1, vocab, vocab)) * spread
        self.eos_id = eos_id
        self.vocab = vocab

    def next_token_logits(self, prefix, token_ids):
        last = token_ids[-1] if len(token_ids) else 0
        return self.table[len(token_ids), last].copy()

    def decode(self, token_ids):
        return " ".join(str(t) for t in token_ids if t != self.eos_id)
