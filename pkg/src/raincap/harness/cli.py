"""``raincap`` command line.

Exit codes: 0 success, 1 usage error, 2 data error, 3 failed gradient checks.
"""
import argparse
import logging
import os
import sys

from .. import decomp
from .. import irs as irs_mod
from .. import svfms
from . import checkpoint as ckpt
from . import pipeline as pl
from .config import ConfigError, ExperimentConfig, load_config
from .imageio import export_image, import_image

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CHECK = 0, 1, 2, 3
MODES = [m.value for m in svfms.EvalMode]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _global_flags(p, suppress):
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=d, help="flat key = value config file")
    p.add_argument("--seed", type=int, default=d, help="global seed (u64), overrides the config")
    p.add_argument("--out", default=d, help="output directory (default: ./raincap-out)")
    p.add_argument("-v", "--verbose", action="store_true", default=d)


def build_parser():
    parser = _Parser(prog="raincap", description="Heavy rain captioning pipeline on a procedural toy world.")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    def add(name, help_):
        p = sub.add_parser(name, help=help_, description=help_)
        _global_flags(p, suppress=True)
        return p

    p = add("gen-data", "render shapes-world scenes and their heavy rain versions")
    p.add_argument("--count", type=int, help="number of scenes (overrides the config)")
    p = add("decompose", "base/detail split of the rain images, or of --input")
    p.add_argument("--input", help="a single PNG/JPEG instead of the dataset")
    add("train-irs", "train the initial reconstruction subnetwork")
    p = add("derain", "restore the rain images, or --input, with the trained IRS")
    p.add_argument("--input")
    p.add_argument("--output", help="output PNG for --input")
    add("train-captioner", "train encoder, attention and decoder on the clean images")
    add("train-svfm", "feature matching: IRS plus source encoder against the frozen target")
    add("train-nic-s", "feature matching baseline without the IRS")
    p = add("caption", "caption the rain images, or --input, with one encoder route")
    p.add_argument("--mode", required=True, choices=MODES)
    p.add_argument("--input")
    p.add_argument("--beam", type=int, help="beam width (overrides the config; 1 = greedy)")
    add("evaluate", "caption with every route and write the metric table")
    p = add("gradcheck", "finite-difference checks of every op and composite loss")
    p.add_argument("--repeats", type=int, default=3)
    return parser


def _config(args):
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise UsageError("--seed must be an unsigned 64-bit integer")
        cfg.seed = args.seed
    return cfg


def _stem(path):
    return os.path.splitext(os.path.basename(path))[0]


def _pad_check(img):
    if img.shape[0] % irs_mod.MULTIPLE or img.shape[1] % irs_mod.MULTIPLE:
        raise pl.DataError(f"image extents {img.shape[:2]} must be divisible by {irs_mod.MULTIPLE}")
    return img


def cmd_gen_data(args, cfg, out):
    if args.count is not None:
        if args.count < 1:
            raise UsageError("--count must be >= 1")
        cfg.count = args.count
    data = pl.generate(cfg)
    pl.save_dataset(out, data, cfg)
    print(f"wrote {len(data.samples)} samples to {os.path.join(out, 'data')}")


def _decompose_to(out, name, img, cfg, tensors):
    pair = decomp.decompose(img, cfg.radius, cfg.eps)
    tensors[f"{name}.base"] = pair.base
    tensors[f"{name}.detail"] = pair.detail
    export_image(pair.base, os.path.join(out, "decomp", f"{name}_base.png"))
    # detail is signed; shift it to mid-gray for viewing
    export_image(pair.detail + 0.5, os.path.join(out, "decomp", f"{name}_detail.png"))


def cmd_decompose(args, cfg, out):
    tensors = {}
    if args.input:
        _decompose_to(out, _stem(args.input), import_image(args.input), cfg, tensors)
    else:
        for i, s in enumerate(pl.load_dataset(out).samples):
            _decompose_to(out, f"{i:04d}", s.I, cfg, tensors)
    ckpt.save_checkpoint(os.path.join(out, "decomp", "layers.rcap"), tensors)
    print(f"decomposed {len(tensors) // 2} image(s) into {os.path.join(out, 'decomp')}")


def cmd_train_irs(args, cfg, out):
    res = pl.run_train_irs(out, cfg)
    print(f"IRS loss {res.initial_loss:.5f} -> {res.final_loss:.5f}")


def cmd_derain(args, cfg, out):
    model = pl.load_irs(out, cfg)
    if args.input:
        J = irs_mod.derain(_pad_check(import_image(args.input)), model)
        dest = args.output or os.path.join(out, "derained", _stem(args.input) + ".png")
        export_image(J, dest)
        print(dest)
        return
    data = pl.load_dataset(out)
    for i, J in enumerate(irs_mod.derain([s.I for s in data.samples], model)):
        export_image(J, os.path.join(out, "derained", f"{i:04d}.png"))
    print(f"derained {len(data.samples)} images into {os.path.join(out, 'derained')}")


def cmd_train_captioner(args, cfg, out):
    res = pl.run_train_captioner(out, cfg)
    print(f"captioner loss {res.history[0]:.4f} -> {res.history[-1]:.4f}, token accuracy {res.accuracy:.4f}")


def cmd_train_svfm(args, cfg, out):
    res = pl.run_train_svfm(out, cfg)
    print(f"L_SVFM {res.initial_loss:.5f} -> {res.final_loss:.5f}")


def cmd_train_nic_s(args, cfg, out):
    res = pl.run_train_nic_s(out, cfg)
    print(f"NIC_S L_SVFM {res.initial_loss:.5f} -> {res.final_loss:.5f}")


def cmd_caption(args, cfg, out):
    if args.beam is not None:
        if args.beam < 1:
            raise UsageError("--beam must be >= 1")
        cfg.beam = args.beam
    ms = pl.model_set(out, cfg, args.mode)
    if args.input:
        caps = svfms.caption_with_mode([_pad_check(import_image(args.input))], args.mode, ms, cfg.max_len, cfg.beam)
        print(" ".join(caps[0]))
        return
    caps = pl.caption_dataset(pl.load_dataset(out), args.mode, ms, cfg)
    dest = os.path.join(out, f"captions_{args.mode}.tsv")
    pl.write_captions(dest, caps)
    print(f"wrote {len(caps)} captions to {dest}")


def cmd_evaluate(args, cfg, out):
    _, table = pl.run_evaluate(out, cfg)
    print(table, end="")


def cmd_gradcheck(args, cfg, out):
    from .gradcheck import run_suite

    results = run_suite(cfg.seed, args.repeats)
    rows = [("check", "rel_err", "tol", "status")]
    for r in results:
        rows.append((r.name, f"{r.error:.3e}", f"{r.tol:.0e}", "ok" if r.passed else "FAIL"))
        print(f"{r.name:<18} {r.error:.3e} < {r.tol:.0e}  {'ok' if r.passed else 'FAIL'}")
    ckpt.atomic_write(os.path.join(out, "gradcheck.tsv"), "".join("\t".join(r) + "\n" for r in rows))
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} check(s) failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_CHECK
    print(f"all {len(results)} checks passed")
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "decompose": cmd_decompose,
    "train-irs": cmd_train_irs,
    "derain": cmd_derain,
    "train-captioner": cmd_train_captioner,
    "train-svfm": cmd_train_svfm,
    "train-nic-s": cmd_train_nic_s,
    "caption": cmd_caption,
    "evaluate": cmd_evaluate,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage() + "raincap: error: a command is required")
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(asctime)s %(levelname)s %(name)s: %(message)s")
        cfg = _config(args)
        out = args.out or "raincap-out"
        os.makedirs(out, exist_ok=True)
        return COMMANDS[args.command](args, cfg, out) or EXIT_OK
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (pl.DataError, ConfigError, ckpt.CheckpointError, ValueError, OSError) as exc:
        print(f"raincap: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
