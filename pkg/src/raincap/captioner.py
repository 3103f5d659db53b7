"""Attention captioner: conv encoder, additive attention and an LSTM decoder.

Features are (N, L, D) grids; the decoder attends over them with the previous
hidden state, feeds ``[E y, z]`` to the LSTM cell and predicts the next word
from ``E y + L_h h + L_z z`` (deep output).
"""
import logging
import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import gradcore as gc
from .gradcore import Tensor
from .nn import BatchNorm2d, Conv2d, Embedding, Linear, LSTMCell, Module

log = logging.getLogger(__name__)

PAD, START, END, UNK = 0, 1, 2, 3
SPECIALS = ("<pad>", "<start>", "<end>", "<unk>")
MAX_LEN = 20
MIN_IMAGE = 32

_STRIP = re.compile(r"[^a-z0-9'\s]")


def tokenize(text):
    return _STRIP.sub("", text.lower()).split()


class Vocabulary:
    def __init__(self, tokens=()):
        self.itos = list(SPECIALS)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        for t in tokens:
            if t not in self.stoi:
                self.stoi[t] = len(self.itos)
                self.itos.append(t)

    @classmethod
    def build(cls, texts, min_freq=1):
        counts = Counter(t for text in texts for t in tokenize(text))
        return cls(sorted(t for t, c in counts.items() if c >= min_freq and t not in SPECIALS))

    def __len__(self):
        return len(self.itos)

    def encode(self, tokens):
        return [self.stoi.get(t, UNK) for t in tokens]

    def decode(self, ids):
        """Token strings for ``ids``, dropping specials and stopping at the end id."""
        out = []
        for i in ids:
            i = int(i)
            if i == END:
                break
            if i > UNK:
                out.append(self.itos[i])
        return out

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write("\n".join(self.itos) + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            itos = f.read().split("\n")[:-1]
        if tuple(itos[:4]) != SPECIALS:
            raise ValueError(f"{path}: vocabulary must start with {SPECIALS}")
        return cls(itos[4:])


@dataclass
class CaptionSample:
    image_id: int
    ids: list
    text: str


def make_sample(image_id, text, vocab, max_len=MAX_LEN):
    ids = [START] + vocab.encode(tokenize(text)) + [END]
    if len(ids) > max_len:
        raise ValueError(f"caption for image {image_id} has {len(ids)} tokens, max is {max_len}")
    return CaptionSample(image_id, ids, text)


@dataclass
class CaptionerDims:
    D: int = 128
    k: int = 64
    H: int = 256
    m: int = 64
    grid: int = 4
    widths: tuple = (16, 32, 64, 128)


# documented full-scale dimensions; never instantiated by the tests
FULL_SCALE_DIMS = dict(D=2048, grid=14)


class Encoder(Module):
    """Conv+BN+relu blocks; all but the last halve the resolution, then adaptive pooling."""

    def __init__(self, rng, dims=CaptionerDims()):
        if dims.widths[-1] != dims.D:
            raise ValueError("last encoder width must equal D")
        self.grid = dims.grid
        self.convs, self.norms = [], []
        c = 3
        for i, w in enumerate(dims.widths):
            stride = 2 if i < len(dims.widths) - 1 else 1
            self.convs.append(Conv2d(c, w, 3, rng, stride=stride, bias=False))
            self.norms.append(BatchNorm2d(w))
            c = w

    def forward(self, x):
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.shape[-1] < MIN_IMAGE or x.shape[-2] < MIN_IMAGE:
            raise ValueError(f"image {x.shape[-2]}x{x.shape[-1]} below {MIN_IMAGE}x{MIN_IMAGE}")
        for conv, bn in zip(self.convs, self.norms):
            x = gc.relu(bn(conv(x)))
        x = gc.adaptive_avg_pool(x, self.grid, self.grid)
        n, d = x.shape[:2]
        return x.reshape(n, d, -1).transpose((0, 2, 1))


class Attention(Module):
    def __init__(self, rng, dims=CaptionerDims()):
        self.W_a = Linear(dims.D, dims.k, rng, bias=False)
        self.W_h = Linear(dims.H, dims.k, rng)
        self.v = Linear(dims.k, 1, rng, bias=False)

    def forward(self, a, h):
        """Context ``z`` (N, D) and weights ``alpha`` (N, L) for features (N, L, D)."""
        if a.shape[-1] != self.W_a.weight.shape[0] or h.shape[-1] != self.W_h.weight.shape[0]:
            raise gc.ShapeError(f"attention got features {a.shape} and hidden {h.shape}")
        n, L = a.shape[:2]
        e = gc.relu(self.W_a(a) + self.W_h(h).reshape(n, 1, -1))
        alpha = gc.softmax(self.v(e).reshape(n, L), axis=1)
        z = (alpha.reshape(n, L, 1) * a).sum(axis=1)
        return z, alpha


class Decoder(Module):
    def __init__(self, vocab_size, rng, dims=CaptionerDims()):
        self.vocab_size = vocab_size
        self.embed = Embedding(vocab_size, dims.m, rng)
        self.lstm = LSTMCell(dims.m + dims.D, dims.H, rng)
        self.init_h = Linear(dims.D, dims.H, rng)
        self.init_c = Linear(dims.D, dims.H, rng)
        self.L_h = Linear(dims.H, dims.m, rng, bias=False)
        self.L_z = Linear(dims.D, dims.m, rng, bias=False)
        self.L_o = Linear(dims.m, vocab_size, rng)


class Captioner(Module):
    """Encoder, attention and decoder; ``state_dict("cap.")`` gives cap.enc/att/dec names."""

    def __init__(self, vocab_size, seed=0, dims=CaptionerDims()):
        rng = np.random.default_rng(seed)
        self.dims = dims
        self.enc = Encoder(rng, dims)
        self.att = Attention(rng, dims)
        self.dec = Decoder(vocab_size, rng, dims)


def init_state(a, dec):
    mean = a.mean(axis=1)
    return gc.tanh(dec.init_h(mean)), gc.tanh(dec.init_c(mean))


def decode_step(y_prev, z, state, dec):
    """One decoder step: returns (logits (N, V), (h, c))."""
    y_prev = np.asarray(y_prev, dtype=np.int64).reshape(-1)
    if y_prev.min() < 0 or y_prev.max() >= dec.vocab_size:
        raise ValueError(f"token id out of range [0, {dec.vocab_size})")
    e = dec.embed(y_prev)
    h, c = dec.lstm(gc.concat([e, z], axis=1), state)
    logits = dec.L_o(e + dec.L_h(h) + dec.L_z(z))
    return logits, (h, c)


def to_batch(images):
    """(H, W, 3) images, or an NCHW array, to an NCHW float array."""
    if isinstance(images, np.ndarray) and images.ndim == 4 and images.shape[1] == 3:
        return images
    arr = np.stack([np.asarray(im, gc.default_dtype()) for im in images])
    return np.ascontiguousarray(arr.transpose(0, 3, 1, 2))


def encode(images, enc):
    """Frozen (eval-mode) features for a batch of images as an (N, L, D) array."""
    was = enc.training
    enc.eval()
    try:
        with gc.no_grad():
            return enc(to_batch(images)).data
    finally:
        enc.train(was)


def pad_ids(samples):
    width = max(len(s.ids) for s in samples)
    out = np.full((len(samples), width), PAD, dtype=np.int64)
    for i, s in enumerate(samples):
        out[i, : len(s.ids)] = s.ids
    return out


def teacher_forced_logits(a, ids, model):
    """Logits (N, T-1, V) predicting ids[:, 1:] from ids[:, :-1]."""
    state = init_state(a, model.dec)
    steps = []
    for t in range(ids.shape[1] - 1):
        z, _ = model.att(a, state[0])
        logits, state = decode_step(ids[:, t], z, state, model.dec)
        steps.append(logits)
    return gc.stack(steps, axis=1)


def caption_loss(a, ids, model):
    logits = teacher_forced_logits(a, ids, model)
    V = logits.shape[-1]
    return gc.cross_entropy(logits.reshape(-1, V), ids[:, 1:].reshape(-1), ignore_index=PAD), logits


def token_accuracy(logits, ids):
    target = ids[:, 1:]
    mask = target != PAD
    pred = np.asarray(logits.data if isinstance(logits, Tensor) else logits).argmax(-1)
    return float((pred[mask] == target[mask]).mean())


@dataclass
class CaptionerTrainConfig:
    steps: int = 600
    lr: float = 2e-3
    batch_size: int = 20
    max_len: int = MAX_LEN

    def __post_init__(self):
        if min(self.steps, self.batch_size, self.max_len) <= 0 or self.lr <= 0:
            raise ValueError("training settings must be positive")


@dataclass
class CaptionerTrainResult:
    model: Captioner
    vocab: Vocabulary
    history: list = field(default_factory=list)
    accuracy: float = float("nan")


def train_captioner(images, captions, cfg=CaptionerTrainConfig(), seed=0, vocab=None, dims=CaptionerDims()):
    """Jointly fit encoder, attention and decoder with teacher forcing.

    ``images`` is a list of (H, W, 3) arrays and ``captions`` the matching
    caption strings (repeat an image to train on several captions).
    """
    if len(images) != len(captions) or not images:
        raise ValueError("need the same positive number of images and captions")
    vocab = vocab or Vocabulary.build(captions)
    samples = [make_sample(i, c, vocab, cfg.max_len) for i, c in enumerate(captions)]
    x = to_batch(images)
    ids = pad_ids(samples)
    model = Captioner(len(vocab), seed=seed, dims=dims)
    opt = gc.Adam(model.parameters(), lr=cfg.lr)
    rng = np.random.default_rng(seed)
    result = CaptionerTrainResult(model=model, vocab=vocab)
    n = len(samples)
    order = np.arange(n)
    pos = n
    for step in range(cfg.steps):
        if n <= cfg.batch_size:
            idx = order
        else:
            if pos + cfg.batch_size > n:
                order, pos = rng.permutation(n), 0
            idx = order[pos : pos + cfg.batch_size]
            pos += cfg.batch_size
        batch_ids = ids[idx]
        batch_ids = batch_ids[:, : int((batch_ids != PAD).sum(1).max())]
        opt.zero_grad()
        loss, _ = caption_loss(model.enc(x[idx]), batch_ids, model)
        gc.backward(loss)
        opt.step()
        result.history.append(loss.item())
        if step % 100 == 0:
            log.debug("captioner step %d loss %.4f", step, result.history[-1])
    result.accuracy = evaluate_accuracy(model, x, ids)
    return result


def evaluate_accuracy(model, images, ids):
    a = encode(images, model.enc)
    with gc.no_grad():
        logits = teacher_forced_logits(Tensor(a), ids, model)
    return token_accuracy(logits, ids)


def greedy_from_features(a, model, max_len=MAX_LEN):
    """Greedy id sequences (without specials) for features (N, L, D)."""
    a = Tensor(np.asarray(a, gc.default_dtype()))
    n = a.shape[0]
    out = [[] for _ in range(n)]
    done = np.zeros(n, bool)
    y = np.full(n, START, dtype=np.int64)
    with gc.no_grad():
        state = init_state(a, model.dec)
        for _ in range(max_len - 1):
            z, _ = model.att(a, state[0])
            logits, state = decode_step(y, z, state, model.dec)
            y = logits.data.argmax(axis=1)
            for i in np.flatnonzero(~done):
                if y[i] == END:
                    done[i] = True
                else:
                    out[i].append(int(y[i]))
            if done.all():
                break
    return out


def caption_greedy(images, model, vocab, max_len=MAX_LEN):
    """Token lists for a batch of images."""
    ids = greedy_from_features(encode(images, model.enc), model, max_len)
    return [vocab.decode(s) for s in ids]


def sequence_logprob(a, seq, model, max_len=MAX_LEN):
    """Length-normalized log-probability of ``seq`` (ids without specials) for one feature grid.

    The end token is scored unless the sequence fills ``max_len``.
    """
    full = [START] + list(seq)
    if len(full) < max_len:
        full.append(END)
    ids = np.asarray([full], dtype=np.int64)
    with gc.no_grad():
        logits = teacher_forced_logits(Tensor(np.asarray(a, gc.default_dtype())[None]), ids, model)
    lp = _log_softmax(logits.data[0].astype(np.float64))
    return float(lp[np.arange(len(full) - 1), ids[0, 1:]].sum() / (len(full) - 1))


def _log_softmax(x):
    x = x - x.max(axis=-1, keepdims=True)
    return x - np.log(np.exp(x).sum(axis=-1, keepdims=True))


def beam_from_features(a, model, k=3, max_len=MAX_LEN):
    """Length-normalized beam search for one (L, D) feature grid.

    Candidates are ranked by cumulative log-probability with ties broken by
    lower token id. The greedy sequence is always among the final candidates,
    so the result never scores below greedy decoding.
    """
    if k < 1:
        raise ValueError("beam width must be >= 1")
    a = np.asarray(a, gc.default_dtype())
    greedy = greedy_from_features(a[None], model, max_len)[0]
    finished = [(tuple(greedy), sequence_logprob(a, greedy, model, max_len))]
    alive = [((), 0.0)]
    with gc.no_grad():
        feats = Tensor(a[None])
        state = init_state(feats, model.dec)
        for step in range(max_len - 1):
            n = len(alive)
            grid = Tensor(np.repeat(a[None], n, axis=0))
            y = np.asarray([s[-1] if s else START for s, _ in alive], dtype=np.int64)
            z, _ = model.att(grid, state[0])
            logits, (h, c) = decode_step(y, z, state, model.dec)
            lp = _log_softmax(logits.data.astype(np.float64))
            total = np.asarray([score for _, score in alive])[:, None] + lp
            # stable sort on the negated scores keeps (hypothesis, token id) order for ties
            flat = np.argsort(-total, axis=None, kind="stable")[:k]
            nxt, rows = [], []
            for f in flat:
                r, tok = divmod(int(f), lp.shape[1])
                seq, score = alive[r][0], float(total[r, tok])
                if tok == END:
                    finished.append((seq, score / (len(seq) + 1)))
                elif step == max_len - 2:
                    finished.append((seq + (tok,), score / (len(seq) + 1)))
                else:
                    nxt.append((seq + (tok,), score))
                    rows.append(r)
            if not nxt:
                break
            alive = nxt
            state = (Tensor(h.data[rows]), Tensor(c.data[rows]))
    best = max(range(len(finished)), key=lambda i: (finished[i][1], -i))
    return list(finished[best][0])


def caption_beam(images, model, vocab, k=3, max_len=MAX_LEN):
    feats = encode(images, model.enc)
    return [vocab.decode(beam_from_features(a, model, k, max_len)) for a in feats]
