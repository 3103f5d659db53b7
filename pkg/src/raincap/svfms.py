"""Semantic visual feature matching.

A source encoder, fed the IRS reconstruction of a heavy rain image, is
trained (together with the IRS) to reproduce the features a frozen target
encoder extracts from the clean image. The four encoder routes used for
evaluation are collected in :class:`EvalMode`.
"""
import copy
import enum
import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np

from . import captioner as cp
from . import gradcore as gc
from . import irs as irs_mod
from .gradcore import Tensor
from .nn import Module

log = logging.getLogger(__name__)


class EvalMode(enum.Enum):
    NIC_T = "nic_t"
    NIC_S = "nic_s"
    NIC_T_D = "nic_t_d"
    PROPOSED = "proposed"


class ProposedEncoder(Module):
    """IRS followed by the source encoder."""

    def __init__(self, irs, source):
        self.irs = irs
        self.source = source


@dataclass
class SvfmTrainConfig:
    epochs: int = 60
    lr: float = 1e-3
    batch_size: int = 10
    pairs: int = 50

    def __post_init__(self):
        if min(self.epochs, self.batch_size, self.pairs) <= 0 or self.lr <= 0:
            raise ValueError("training settings must be positive")


# full-scale setting; the desk runs use SvfmTrainConfig()
FULL_SCALE_SVFM_PAIRS = 80000


@dataclass
class SvfmTrainResult:
    encoder: Module
    history: list = field(default_factory=list)
    initial_loss: float = float("nan")
    final_loss: float = float("nan")


def state_hash(module):
    """SHA-256 over parameter and buffer bytes in name order."""
    h = hashlib.sha256()
    for name, arr in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def reconstruct(I, irs):
    """Differentiable IRS restoration of NCHW (or list of HWC) heavy rain images."""
    images = irs_mod.from_nchw(I) if isinstance(I, np.ndarray) and I.ndim == 4 else I
    base, detail = irs_mod.decompose_batch(images, irs)
    A, T, S = irs_mod.irs_forward(base, detail, irs)
    return irs_mod.invert_graph(irs_mod.to_nchw(images), A, T, S)


def _same_config(source, target):
    s = [(n, p.shape) for n, p in source.named_parameters()]
    t = [(n, p.shape) for n, p in target.named_parameters()]
    if s != t or source.grid != target.grid:
        raise ValueError("source and target encoders are configured differently")


def target_features(J, target):
    """Frozen target features (N, L, D) for clean images; never part of a graph."""
    return cp.encode(J, target)


def extract_features(J_hat, J, source, target):
    """(F_S, F_T): source features on the reconstruction, frozen target features on ``J``."""
    _same_config(source, target)
    return source(J_hat), Tensor(target_features(J, target))


def svfm_loss(F_S, F_T):
    """Mean absolute difference between the two feature grids."""
    return gc.l1_loss(F_S, F_T)


def _fit(forward, trainable, I, F_T, cfg, seed, guard):
    """Adam over ``trainable`` minimizing l1(forward(I[idx]), F_T[idx])."""
    rng = np.random.default_rng(seed)
    opt = gc.Adam(trainable.parameters(), lr=cfg.lr)
    before = state_hash(guard)
    result = SvfmTrainResult(encoder=trainable)
    result.initial_loss = _mean_loss(forward, trainable, I, F_T, cfg.batch_size)
    n = len(I)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        losses = []
        for i in range(0, n, cfg.batch_size):
            idx = order[i : i + cfg.batch_size]
            opt.zero_grad()
            loss = svfm_loss(forward(I[idx]), Tensor(F_T[idx]))
            gc.backward(loss)
            opt.step()
            losses.append(loss.item())
        result.history.append(float(np.mean(losses)))
        log.debug("svfm epoch %d loss %.5f", epoch, result.history[-1])
    result.final_loss = _mean_loss(forward, trainable, I, F_T, cfg.batch_size)
    if state_hash(guard) != before:
        raise RuntimeError("target encoder changed during feature matching")
    return result


def _mean_loss(forward, module, I, F_T, batch):
    was = module.training
    module.eval()
    total = 0.0
    try:
        with gc.no_grad():
            for i in range(0, len(I), batch):
                sl = slice(i, i + batch)
                total += svfm_loss(forward(I[sl]), Tensor(F_T[sl])).item() * len(I[sl])
    finally:
        module.train(was)
    return total / len(I)


def _split(pairs):
    if not pairs:
        raise ValueError("no training pairs")
    I = irs_mod.to_nchw([p[0] for p in pairs])
    J = irs_mod.to_nchw([p[1] for p in pairs])
    return I, J


def new_source(target, seed):
    """Randomly initialized encoder with the target's configuration."""
    rng = np.random.default_rng(seed)
    dims = cp.CaptionerDims(D=target.convs[-1].weight.shape[0], grid=target.grid,
                            widths=tuple(c.weight.shape[0] for c in target.convs))
    return cp.Encoder(rng, dims).to(target.convs[0].weight.dtype)


def train_svfm(pairs, target, init_irs, cfg=SvfmTrainConfig(), seed=0):
    """Train a copy of ``init_irs`` and a fresh source encoder end to end.

    ``pairs`` holds (heavy rain, clean) (H, W, 3) images. The target encoder
    is only read.
    """
    I, J = _split(pairs)
    F_T = target_features(J, target)
    model = ProposedEncoder(copy.deepcopy(init_irs), new_source(target, seed))
    _same_config(model.source, target)

    def forward(x):
        return model.source(reconstruct(x, model.irs))

    return _fit(forward, model, I, F_T, cfg, seed, target)


def train_nic_s(pairs, target, cfg=SvfmTrainConfig(), seed=0):
    """Baseline: a source encoder matched to the target directly on heavy rain input."""
    I, J = _split(pairs)
    F_T = target_features(J, target)
    source = new_source(target, seed)
    return _fit(source, source, I, F_T, cfg, seed, target)


def matching_distance(forward, module, pairs, target, batch=10):
    """Mean l1 feature distance over ``pairs`` for an encoder route."""
    I, J = _split(pairs)
    return _mean_loss(forward, module, I, target_features(J, target), batch)


@dataclass
class ModelSet:
    """Everything caption_with_mode may need; absent models stay None."""

    captioner: cp.Captioner
    vocab: cp.Vocabulary
    irs: object = None
    proposed: ProposedEncoder = None
    nic_s: cp.Encoder = None


def mode_features(images, mode, models):
    mode = EvalMode(mode)
    need = {EvalMode.NIC_S: "nic_s", EvalMode.NIC_T_D: "irs", EvalMode.PROPOSED: "proposed"}.get(mode)
    if need and getattr(models, need) is None:
        raise ValueError(f"mode {mode.value} needs a trained {need} model")
    if mode is EvalMode.NIC_T:
        return cp.encode(images, models.captioner.enc)
    if mode is EvalMode.NIC_S:
        return cp.encode(images, models.nic_s)
    if mode is EvalMode.NIC_T_D:
        return cp.encode(irs_mod.derain(list(images), models.irs), models.captioner.enc)
    prop = models.proposed
    was = prop.training
    prop.eval()
    try:
        with gc.no_grad():
            return prop.source(reconstruct(list(images), prop.irs)).data
    finally:
        prop.train(was)


def caption_with_mode(images, mode, models, max_len=cp.MAX_LEN, beam=1):
    """Captions (token lists) through the frozen attention and decoder.

    Greedy by default; ``beam > 1`` switches to beam search.
    """
    feats = mode_features(images, mode, models)
    if beam > 1:
        ids = [cp.beam_from_features(a, models.captioner, beam, max_len) for a in feats]
    else:
        ids = cp.greedy_from_features(feats, models.captioner, max_len)
    return [models.vocab.decode(s) for s in ids]
