"""Command-line entry point: ``ldisplat {gen,render,fit,eval,gradcheck}``.

Exit status: 0 on success, 1 for invalid inputs, 2 for numerical failures
(non-finite loss, failed gradient check). The worker thread count is read
from ``LDISPLAT_NUM_THREADS``.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from .bundle import BundleError, make_bundle, read_bundle, read_cameras, write_bundle
from .config import ConfigError, fit_config, read_config
from .diffcheck import SUITES, TABLE_HEADER, run_suite
from .evaluation import evaluate
from .fitter import fit
from .ldi import read_ldi, write_image, write_ldi, write_png
from .splat import render

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2
SUITE_GROUPS = {
    "render": ("render", "render_layer"),
    "losses": ("vs", "mvs", "sc", "inc", "sm", "total"),
    "all": SUITES,
}
FIT_LDI = "final_ldi.bin"
FIT_TRACE = "trace.csv"
FIT_SUMMARY = "report.txt"


class UsageError(ValueError):
    pass


def _size(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like 64x64, got {text!r}") from None
    if w < 3 or h < 3:
        raise argparse.ArgumentTypeError("size must be at least 3x3")
    return w, h


def _config(path) -> dict:
    return read_config(path) if path else {}


def cmd_gen(args) -> int:
    if not 1 <= args.n_obj_min <= args.n_obj_max <= 4:
        raise UsageError("--n-obj-min/--n-obj-max must satisfy 1 <= min <= max <= 4")
    w, h = args.size
    cfg = fit_config(_config(args.config))
    bundle = make_bundle(args.seed, args.n_obj_min, args.n_obj_max, args.views, w, h,
                         target_downsampling=cfg.splat.target_downsampling, n_heldout=args.heldout)
    out = write_bundle(bundle, args.out)
    print(f"wrote bundle with {len(bundle.scene.sprites)} sprite(s), {args.views} target(s) "
          f"and {args.heldout} held-out view(s) to {out}")
    return EXIT_OK


def cmd_render(args) -> int:
    ldi = read_ldi(_existing(args.ldi, "--ldi"))
    cams = read_cameras(args.camera)
    if (ldi.width, ldi.height) != (cams.width, cams.height):
        raise UsageError(f"--ldi is {ldi.width}x{ldi.height} but --camera expects {cams.width}x{cams.height}")
    cfg = fit_config(_config(args.config)).splat
    image = render(ldi, cams.view(args.view), cfg, args.layer)
    out = Path(args.out)
    if out.suffix == ".img":
        write_image(out, image)
    else:
        write_png(out, image)
    print(f"rendered {image.shape[1]}x{image.shape[0]} view {args.view!r} to {out}")
    return EXIT_OK


def cmd_fit(args) -> int:
    bundle = read_bundle(args.bundle)
    values = _config(args.config)
    if args.layers is not None:
        values["n_layers"] = args.layers
    cfg = fit_config(values)
    if cfg.splat.target_downsampling != bundle.cameras.target_downsampling:
        raise UsageError(
            f"trg_splat_downsampling {cfg.splat.target_downsampling} does not match the bundle's "
            f"{bundle.cameras.target_downsampling}"
        )
    report = fit(bundle.source_image, bundle.views(), cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / FIT_TRACE).write_text(report.to_csv())
    write_ldi(out / FIT_LDI, report.ldi)
    summary = [f"layers {cfg.n_layers}", f"iterations {cfg.iterations}", f"wall_time_s {report.wall_time:.3f}"]
    summary += [f"{k} {v!r}" for k, v in report.metrics.items()]
    (out / FIT_SUMMARY).write_text("\n".join(summary) + "\n")
    print(f"fit {cfg.n_layers}-layer LDI: vs {report.initial.vs:.5f} -> {report.final.vs:.5f} "
          f"in {report.wall_time:.1f}s; wrote {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    pred = Path(args.pred)
    if pred.is_dir():
        pred = pred / FIT_LDI
    ldi = read_ldi(_existing(pred, "--pred"))
    bundle = read_bundle(args.bundle)
    cfg = fit_config(_config(args.config))
    report = evaluate(ldi, bundle, cfg.splat, cfg.boundary_fraction)
    Path(args.out).write_text(report.csv())
    print(report.csv(), end="")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    start = time.perf_counter()
    print(TABLE_HEADER)
    ok = True
    for suite in SUITE_GROUPS[args.suite]:
        report = run_suite(suite, seed=args.seed, n_probes=args.probes, order=args.order)
        print(report.table(), flush=True)
        ok &= report.passed
    print(f"{'PASS' if ok else 'FAIL'} ({time.perf_counter() - start:.1f}s, "
          f"central differences order {args.order}, step 1e-4, tolerance 1e-4)")
    return EXIT_OK if ok else EXIT_NUMERICAL


def _existing(path, flag: str) -> Path:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"{flag}: file not found: {path}")
    return path


class _Parser(argparse.ArgumentParser):
    """Reports bad flags with the validation exit status instead of argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ldisplat", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a synthetic dataset bundle")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--n-obj-min", type=int, default=1)
    g.add_argument("--n-obj-max", type=int, default=3)
    g.add_argument("--views", type=int, default=8, help="targets used for fitting")
    g.add_argument("--heldout", type=int, default=4, help="extra targets kept for evaluation")
    g.add_argument("--size", type=_size, default=(64, 64), help="source size WxH")
    g.add_argument("--config", help="config file (only trg_splat_downsampling is used)")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("render", help="render an LDI into a camera of a camera file")
    r.add_argument("--ldi", required=True)
    r.add_argument("--camera", required=True, help="cameras.txt holding a 'source' camera")
    r.add_argument("--config")
    r.add_argument("--out", required=True, help=".png, or .img for raw floats")
    r.add_argument("--layer", type=int, help="render a single layer")
    r.add_argument("--view", default="source", help="camera name to render (default: source)")
    r.set_defaults(func=cmd_render)

    f = sub.add_parser("fit", help="fit an LDI to a bundle")
    f.add_argument("--bundle", required=True)
    f.add_argument("--config")
    f.add_argument("--layers", type=int, choices=(1, 2))
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fit)

    e = sub.add_parser("eval", help="score a fitted LDI against a bundle")
    e.add_argument("--pred", required=True, help="fit output directory or LDI file")
    e.add_argument("--bundle", required=True)
    e.add_argument("--config")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("gradcheck", help="compare analytic gradients with finite differences")
    c.add_argument("--suite", choices=tuple(SUITE_GROUPS), default="all")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--order", type=int, choices=(2, 4), default=2,
                   help="central-difference stencil order (default 2)")
    c.add_argument("--probes", type=int, default=200, help="accepted probes per parameter block")
    c.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FloatingPointError as exc:
        print(f"ldisplat {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (UsageError, ConfigError, BundleError, ValueError, OSError) as exc:
        print(f"ldisplat {args.command}: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
