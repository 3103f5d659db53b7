"""Experiment stages shared by the CLI and the acceptance tests.

Every stage reads and writes a single output directory:

    data/clean/NNNN.png, data/rain/NNNN.png, data/samples.rcap,
    data/captions.tsv, data/params.tsv
    irs.rcap, captioner.rcap + vocab.txt, svfm.rcap, nic_s.rcap
    captions_<mode>.tsv, report.tsv, report.txt

Stage seeds are derived from the global seed and the stage name.
"""
import json
import logging
import os
import zlib
from dataclasses import dataclass

import numpy as np

from .. import captioner as cp
from .. import irs as irs_mod
from .. import metrics, svfms
from ..rainmodel import HeavyRainSample, StreakParams, make_sample
from . import checkpoint as ckpt
from .config import ExperimentConfig
from .imageio import export_image
from .shapes import gen_shapes_dataset

log = logging.getLogger(__name__)


class DataError(Exception):
    """Missing or malformed inputs; the CLI maps it to exit code 2."""


def stage_seed(seed, name):
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1), zlib.crc32(name.encode())])
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass
class Dataset:
    samples: list
    captions: dict  # image id -> list of caption strings

    def first_captions(self):
        return [self.captions[i][0] for i in range(len(self.samples))]


def _path(out, *parts):
    return os.path.join(out, *parts)


def _require(path, what):
    if not os.path.exists(path):
        raise DataError(f"{what} not found at {path}; run the producing subcommand first")
    return path


def _tsv(rows):
    return "".join("\t".join(str(c) for c in r) + "\n" for r in rows)


# -- data ----------------------------------------------------------------------------


def generate(cfg):
    records = gen_shapes_dataset(cfg.count, stage_seed(cfg.seed, "shapes"), cfg.captions_per_image, cfg.image_size)
    ranges = cfg.ranges()
    samples = [make_sample(r.image, r.depth, stage_seed(cfg.seed, f"rain-{r.image_id}"), ranges) for r in records]
    return Dataset(samples, {r.image_id: list(r.captions) for r in records})


def save_dataset(out, data, cfg):
    tensors = {}
    for i, s in enumerate(data.samples):
        for key in ("J", "I", "T", "S", "A", "depth"):
            tensors[f"data.{i:04d}.{key}"] = getattr(s, key)
        export_image(s.J, _path(out, "data", "clean", f"{i:04d}.png"))
        export_image(s.I, _path(out, "data", "rain", f"{i:04d}.png"))
    ckpt.save_checkpoint(_path(out, "data", "samples.rcap"), tensors)
    caps = [(i, c) for i in sorted(data.captions) for c in data.captions[i]]
    ckpt.atomic_write(_path(out, "data", "captions.tsv"), _tsv(caps))
    params = [(i, s.seed, json.dumps(s.params_dict(), sort_keys=True)) for i, s in enumerate(data.samples)]
    ckpt.atomic_write(_path(out, "data", "params.tsv"), _tsv(params))
    ckpt.atomic_write(_path(out, "data", "manifest.txt"), f"seed = {cfg.seed}\nconfig_hash = {cfg.hash()}\ncount = {len(data.samples)}\n")


def load_dataset(out):
    try:
        tensors = ckpt.load_checkpoint(_require(_path(out, "data", "samples.rcap"), "dataset"))
        with open(_require(_path(out, "data", "params.tsv"), "sample parameters"), encoding="utf-8") as f:
            params = [line.rstrip("\n").split("\t") for line in f if line.strip()]
        captions = {}
        with open(_require(_path(out, "data", "captions.tsv"), "captions"), encoding="utf-8") as f:
            for line in f:
                if line.strip():
                    i, text = line.rstrip("\n").split("\t", 1)
                    captions.setdefault(int(i), []).append(text)
        samples = []
        for i, seed, pj in params:
            k = f"data.{int(i):04d}."
            samples.append(
                HeavyRainSample(
                    J=tensors[k + "J"], I=tensors[k + "I"], T=tensors[k + "T"], S=tensors[k + "S"],
                    A=tensors[k + "A"], depth=tensors[k + "depth"], seed=int(seed), params=StreakParams(**json.loads(pj)),
                )
            )
    except (ckpt.CheckpointError, KeyError, ValueError, TypeError) as exc:
        raise DataError(f"corrupt dataset in {out}: {exc}") from exc
    if len(captions) != len(samples):
        raise DataError("captions.tsv and samples.rcap disagree on the image count")
    return Dataset(samples, captions)


# -- model persistence -----------------------------------------------------------------


def dims(cfg):
    # the last encoder block emits the D feature channels
    widths = cp.CaptionerDims().widths[:-1] + (cfg.D,)
    return cp.CaptionerDims(D=cfg.D, k=cfg.k, H=cfg.H, m=cfg.m, grid=cfg.grid, widths=widths)


def _load_into(module, path, prefix, what):
    try:
        module.load_state_dict(ckpt.load_checkpoint(_require(path, what)), prefix)
    except (ckpt.CheckpointError, KeyError, ValueError) as exc:
        raise DataError(f"cannot load {what} from {path}: {exc}") from exc
    return module


def load_irs(out, cfg):
    return _load_into(irs_mod.IrsModel(radius=cfg.radius, eps=cfg.eps), _path(out, "irs.rcap"), "irs.", "IRS checkpoint")


def load_captioner(out, cfg):
    try:
        vocab = cp.Vocabulary.load(_require(_path(out, "vocab.txt"), "vocabulary"))
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    model = cp.Captioner(len(vocab), dims=dims(cfg))
    return _load_into(model, _path(out, "captioner.rcap"), "cap.", "captioner checkpoint").eval(), vocab


def _new_encoder(cfg):
    return cp.Encoder(np.random.default_rng(0), dims(cfg))


def load_proposed(out, cfg):
    model = svfms.ProposedEncoder(irs_mod.IrsModel(radius=cfg.radius, eps=cfg.eps), _new_encoder(cfg))
    return _load_into(model, _path(out, "svfm.rcap"), "svfm.", "svfm checkpoint").eval()


def load_nic_s(out, cfg):
    return _load_into(_new_encoder(cfg), _path(out, "nic_s.rcap"), "nic_s.source.", "NIC_S checkpoint").eval()


def _history(path, values):
    ckpt.atomic_write(path, _tsv([("epoch", "loss")] + [(i, repr(v)) for i, v in enumerate(values)]))


# -- training stages --------------------------------------------------------------------


def run_train_irs(out, cfg, data=None):
    data = data or load_dataset(out)
    tc = irs_mod.IrsTrainConfig(patch=cfg.irs_patch, batch_size=cfg.irs_batch, epochs=cfg.irs_epochs,
                                lr=cfg.irs_lr, dataset_size=len(data.samples))
    model = irs_mod.IrsModel(seed=stage_seed(cfg.seed, "irs-init"), radius=cfg.radius, eps=cfg.eps)
    res = irs_mod.train_irs(data.samples, tc, seed=stage_seed(cfg.seed, "irs"), model=model)
    ckpt.save_checkpoint(_path(out, "irs.rcap"), res.model.state_dict("irs."))
    _history(_path(out, "irs_history.tsv"), res.history)
    return res


def run_train_captioner(out, cfg, data=None):
    data = data or load_dataset(out)
    images, texts = [], []
    for i, s in enumerate(data.samples):
        for c in data.captions[i]:
            images.append(s.J)
            texts.append(c)
    tc = cp.CaptionerTrainConfig(steps=cfg.cap_steps, lr=cfg.cap_lr, batch_size=cfg.cap_batch, max_len=cfg.max_len)
    try:
        res = cp.train_captioner(images, texts, tc, seed=stage_seed(cfg.seed, "captioner"), dims=dims(cfg))
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    ckpt.save_checkpoint(_path(out, "captioner.rcap"), res.model.state_dict("cap."))
    ckpt.atomic_write(_path(out, "vocab.txt"), "\n".join(res.vocab.itos) + "\n")
    _history(_path(out, "captioner_history.tsv"), res.history)
    return res


def _svfm_cfg(cfg, n):
    return svfms.SvfmTrainConfig(epochs=cfg.svfm_epochs, lr=cfg.svfm_lr, batch_size=cfg.svfm_batch, pairs=n)


def run_train_svfm(out, cfg, data=None):
    data = data or load_dataset(out)
    cap, _ = load_captioner(out, cfg)
    irs = load_irs(out, cfg)
    pairs = [(s.I, s.J) for s in data.samples]
    res = svfms.train_svfm(pairs, cap.enc, irs, _svfm_cfg(cfg, len(pairs)), seed=stage_seed(cfg.seed, "svfm"))
    ckpt.save_checkpoint(_path(out, "svfm.rcap"), res.encoder.state_dict("svfm."))
    _history(_path(out, "svfm_history.tsv"), res.history)
    return res


def run_train_nic_s(out, cfg, data=None):
    data = data or load_dataset(out)
    cap, _ = load_captioner(out, cfg)
    pairs = [(s.I, s.J) for s in data.samples]
    res = svfms.train_nic_s(pairs, cap.enc, _svfm_cfg(cfg, len(pairs)), seed=stage_seed(cfg.seed, "nic_s"))
    ckpt.save_checkpoint(_path(out, "nic_s.rcap"), res.encoder.state_dict("nic_s.source."))
    _history(_path(out, "nic_s_history.tsv"), res.history)
    return res


# -- inference ---------------------------------------------------------------------------


def model_set(out, cfg, mode=None):
    """Load the captioner plus whatever ``mode`` needs (everything when mode is None)."""
    cap, vocab = load_captioner(out, cfg)
    ms = svfms.ModelSet(cap, vocab)
    mode = svfms.EvalMode(mode) if mode else None
    if mode in (None, svfms.EvalMode.NIC_T_D):
        ms.irs = load_irs(out, cfg)
    if mode in (None, svfms.EvalMode.PROPOSED):
        ms.proposed = load_proposed(out, cfg)
    if mode in (None, svfms.EvalMode.NIC_S):
        ms.nic_s = load_nic_s(out, cfg)
    return ms


def caption_dataset(data, mode, ms, cfg, batch=25):
    images = [s.I for s in data.samples]
    out = []
    for i in range(0, len(images), batch):
        out += svfms.caption_with_mode(images[i : i + batch], mode, ms, cfg.max_len, cfg.beam)
    return out


def caption_clean(data, ms, cfg, batch=25):
    out = []
    for i in range(0, len(data.samples), batch):
        feats = cp.encode([s.J for s in data.samples[i : i + batch]], ms.captioner.enc)
        out += [ms.vocab.decode(s) for s in cp.greedy_from_features(feats, ms.captioner, cfg.max_len)]
    return out


def write_captions(path, captions):
    ckpt.atomic_write(path, _tsv((i, " ".join(c)) for i, c in enumerate(captions)))


def corpus(hyps, data):
    return {i: (h, [cp.tokenize(c) for c in data.captions[i]]) for i, h in enumerate(hyps)}


def run_evaluate(out, cfg, data=None, ms=None):
    data = data or load_dataset(out)
    ms = ms or model_set(out, cfg)
    corpora = {m.value: corpus(caption_dataset(data, m, ms, cfg), data) for m in svfms.EvalMode}
    corpora["clean"] = corpus(caption_clean(data, ms, cfg), data)
    scores, tsv, table = metrics.evaluate_table(corpora, cfg.hash(), cfg.seed)
    ckpt.atomic_write(_path(out, "report.tsv"), tsv)
    ckpt.atomic_write(_path(out, "report.txt"), table)
    return scores, table


def run_all(out, cfg):
    """gen-data through evaluate in one go; returns (scores, table)."""
    data = generate(cfg)
    save_dataset(out, data, cfg)
    run_train_irs(out, cfg, data)
    run_train_captioner(out, cfg, data)
    run_train_svfm(out, cfg, data)
    run_train_nic_s(out, cfg, data)
    return run_evaluate(out, cfg, data)
