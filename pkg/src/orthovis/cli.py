"""Command-line driver: synth, fit, render, composite and metrics over files.

Every subcommand accepts ``--config FILE``, a flat ``key = value`` file whose
keys are long option names (``max-iterations = 500``). Flags given on the
command line override it.
"""

from __future__ import annotations

import argparse
import configparser
import sys
from pathlib import Path

import numpy as np

from . import files
from .fit import FitOptions, fit_pose, silhouette_distance
from .imaging import color_transfer, extract_crop, fuse, paste_crop
from .render import RenderOptions, render_modalities
from .synth import ArchSpec, Perturbation, default_pose, make_synthetic_case, perturb_pose
from .teeth import load_treatment_series, save_treatment_series

EXIT_OK = 0
EXIT_NOT_CONVERGED = 1
EXIT_ERROR = 2

MIN_SIZE = 64


class CLIError(Exception):
    pass


def _size_arg(text):
    try:
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must be an integer, got {text!r}")
    if n < MIN_SIZE:
        raise argparse.ArgumentTypeError(f"size must be >= {MIN_SIZE}")
    return n


def _on_off(text):
    t = str(text).strip().lower()
    if t in ("on", "true", "yes", "1"):
        return True
    if t in ("off", "false", "no", "0"):
        return False
    raise argparse.ArgumentTypeError(f"expected on or off, got {text!r}")


def _path(value, what):
    if value is None:
        raise CLIError(f"missing {what}; pass it as a flag, in --config, or via --case")
    return Path(value)


def _existing(value, what):
    p = _path(value, what)
    if not p.exists():
        raise CLIError(f"{what} not found: {p}")
    return p


def _size_pair(args):
    return (args.size, args.size)


def _check_shape(img, args, what):
    if img.shape[:2] != (args.size, args.size):
        raise CLIError(f"{what} is {img.shape[1]}x{img.shape[0]}, expected {args.size}x{args.size} (--size)")


def _case_path(args, attr, name):
    if getattr(args, attr, None) is None and getattr(args, "case", None) is not None:
        candidate = Path(args.case) / name
        if candidate.exists():
            setattr(args, attr, str(candidate))


def _out_dir(args, name) -> Path:
    if args.out is not None:
        return Path(args.out)
    return Path(args.case) / name if args.case is not None else Path(name)


def _fill_from_case(args):
    _case_path(args, "series", "series")
    _case_path(args, "target", "target.png")
    _case_path(args, "mouth_label", "mouth_label.png")
    _case_path(args, "initial_pose", "initial_pose.json")


def cmd_synth(args) -> int:
    out = Path(args.out)
    spec = ArchSpec(teeth_per_jaw=args.teeth_per_jaw, seed=args.seed, subdivisions=args.subdivisions)
    case = make_synthetic_case(spec, size=_size_pair(args), visibility_window=args.visibility_window,
                               n_stages=args.stages)
    out.mkdir(parents=True, exist_ok=True)
    save_treatment_series(case.series, out / "series")
    files.write_gray(out / "target.png", case.target_silhouette)
    files.write_mask(out / "mouth_label.png", case.mouth_label)
    files.write_pose(out / "true_pose.json", case.true_pose)
    rng = np.random.default_rng([args.seed, 99])
    init = perturb_pose(case.true_pose, case.scene_scale, rng, Perturbation())
    files.write_pose(out / "initial_pose.json", init)
    files.write_json(out / "case.json", {"size": args.size, "visibility_window": args.visibility_window,
                                         "seed": args.seed, "scene_scale": case.scene_scale})
    print(f"wrote synthetic case to {out}")
    return EXIT_OK


def _overlay(target, fitted):
    rgb = np.zeros(target.shape + (3,))
    rgb[..., 0] = target
    rgb[..., 1] = fitted
    return rgb


def cmd_fit(args) -> int:
    _fill_from_case(args)
    series = load_treatment_series(_existing(args.series, "series directory"))
    target = files.read_gray(_existing(args.target, "target silhouette"))
    label = files.read_mask(_existing(args.mouth_label, "mouth label"))
    _check_shape(target, args, "target silhouette")
    _check_shape(label, args, "mouth label")
    model = series[0]
    if args.initial_pose is not None:
        init = files.read_pose(_existing(args.initial_pose, "initial pose"))
    else:
        init = default_pose(model, _size_pair(args))
    options = FitOptions(learning_rate=args.lr, max_iterations=args.max_iterations,
                         loss_threshold=args.loss_threshold,
                         visibility_window=args.visibility_window)
    result = fit_pose(model, target, label, init, options)

    out = _out_dir(args, "fit")
    out.mkdir(parents=True, exist_ok=True)
    files.write_json(out / "fit.json", result.to_dict(include_trace=not args.no_trace))
    fitted = render_modalities(result.pose, model, label,
                               RenderOptions(_size_pair(args), args.visibility_window)).silhouette
    files.write_rgb(out / "overlay.png", _overlay(target, fitted))
    state = "converged" if result.converged else "did not converge"
    print(f"fit {state}: loss {result.final_loss:.3e} after {result.iterations_run} iterations")
    if result.converged or args.allow_nonconverged:
        return EXIT_OK
    return EXIT_NOT_CONVERGED


def cmd_render(args) -> int:
    _fill_from_case(args)
    if args.pose is None and args.case is not None:
        args.pose = str(Path(args.case) / "fit" / "fit.json")
    series = load_treatment_series(_existing(args.series, "series directory"))
    pose = files.read_pose(_existing(args.pose, "pose file"))
    label = files.read_mask(_existing(args.mouth_label, "mouth label"))
    _check_shape(label, args, "mouth label")
    out = _out_dir(args, "render")
    out.mkdir(parents=True, exist_ok=True)
    opts = RenderOptions(_size_pair(args), args.visibility_window)
    for i in range(len(series)):
        m = render_modalities(pose, series[i], label, opts)
        files.write_gray(out / f"stage_{i}_silhouette.png", m.silhouette)
        files.write_mask(out / f"stage_{i}_mask.png", m.mask)
        files.write_gray(out / f"stage_{i}_depth.png", m.depth, bits=16)
    print(f"rendered {len(series)} stages to {out}")
    return EXIT_OK


def cmd_composite(args) -> int:
    face = files.read_rgb(_existing(args.face, "face image"))
    generated = files.read_rgb(_existing(args.generated, "generated crop"))
    rect = files.read_rect(_existing(args.rect, "crop rect"))
    label = files.read_mask(_existing(args.mouth_label, "mouth label"))
    try:
        original = extract_crop(face, rect)
    except ValueError as e:
        raise CLIError(str(e))
    if generated.shape != original.shape or label.shape != original.shape[:2]:
        raise CLIError(f"generated crop {generated.shape[1]}x{generated.shape[0]} and mouth label "
                       f"{label.shape[1]}x{label.shape[0]} must match the {rect.side}x{rect.side} crop")
    fused = fuse(generated, original, label)
    if args.color_transfer:
        out_region = label
        if args.generated_teeth_mask is not None:
            out_region = files.read_mask(_existing(args.generated_teeth_mask, "generated teeth mask"))
        ref_region = label
        if args.teeth_mask is not None:
            ref_region = files.read_mask(_existing(args.teeth_mask, "teeth mask"))
        # Color changes stay inside the mouth label so the outside remains the original.
        out_region = (out_region != 0) & (label != 0)
        if out_region.any() and (ref_region != 0).any():
            fused = color_transfer(fused, original, out_region, ref_region)
    result = paste_crop(face, fused, rect)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files.write_rgb(out / "result.png", result)
    print(f"wrote {out / 'result.png'}")
    return EXIT_OK


def iou(a, b, region=None) -> float:
    """Intersection over union of ``a >= 0.5`` and ``b >= 0.5`` inside ``region``; 1.0 when both are empty."""
    a = np.asarray(a) >= 0.5
    b = np.asarray(b) >= 0.5
    if region is not None:
        r = np.asarray(region) != 0
        a, b = a & r, b & r
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def cmd_metrics(args) -> int:
    a = files.read_gray(_existing(args.a, "first silhouette"))
    b = files.read_gray(_existing(args.b, "second silhouette"))
    if a.shape != b.shape:
        raise CLIError(f"silhouettes differ in size: {a.shape[1]}x{a.shape[0]} vs {b.shape[1]}x{b.shape[0]}")
    if args.region is not None:
        region = files.read_mask(_existing(args.region, "region mask"))
        if region.shape != a.shape:
            raise CLIError("region mask size differs from the silhouettes")
    else:
        region = np.ones(a.shape, dtype=np.uint8)
    metrics = {"silhouette_distance": silhouette_distance(a, b, region, args.sigma),
               "iou": iou(a, b, region)}
    files.write_json(Path(args.out), metrics)
    print(f"silhouette_distance {metrics['silhouette_distance']:.6g}")
    print(f"iou {metrics['iou']:.6g}")
    return EXIT_OK


def _common(p):
    p.add_argument("--config", help="flat key = value file with option defaults")
    p.add_argument("--size", type=_size_arg, default=256, help="square render size in pixels")
    p.add_argument("--visibility-window", type=float, default=0.5,
                   help="front fraction of the depth range whose teeth are drawn")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="orthovis", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic case directory")
    _common(p)
    p.add_argument("--out", default="case")
    p.add_argument("--teeth-per-jaw", type=int, default=14)
    p.add_argument("--stages", type=int, default=2)
    p.add_argument("--subdivisions", type=int, default=4)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", help="recover the pose aligning stage 0 with a target silhouette")
    _common(p)
    p.add_argument("--case", help="synthetic case directory supplying default inputs")
    p.add_argument("--series")
    p.add_argument("--target")
    p.add_argument("--mouth-label")
    p.add_argument("--initial-pose")
    p.add_argument("--out", help="output directory (default: fit, inside --case when given)")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--max-iterations", type=int, default=1000)
    p.add_argument("--loss-threshold", type=float, default=1e-3)
    p.add_argument("--allow-nonconverged", action="store_true")
    p.add_argument("--no-trace", action="store_true", help="omit the loss trace from fit.json")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("render", help="render every stage with one pose")
    _common(p)
    p.add_argument("--case")
    p.add_argument("--series")
    p.add_argument("--pose", help="pose JSON or fit.json")
    p.add_argument("--mouth-label")
    p.add_argument("--out", help="output directory (default: render, inside --case when given)")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("composite", help="fuse a generated mouth crop back into the face")
    _common(p)
    p.add_argument("--generated")
    p.add_argument("--face")
    p.add_argument("--rect", help="crop rect JSON with x0, y0, side")
    p.add_argument("--mouth-label")
    p.add_argument("--teeth-mask", help="teeth mask of the original crop")
    p.add_argument("--generated-teeth-mask")
    p.add_argument("--color-transfer", type=_on_off, default=True, metavar="on|off")
    p.add_argument("--out", default="composite")
    p.set_defaults(func=cmd_composite)

    p = sub.add_parser("metrics", help="silhouette distance and IoU of two silhouettes")
    _common(p)
    p.add_argument("--a")
    p.add_argument("--b")
    p.add_argument("--region")
    p.add_argument("--sigma", type=float, default=1.5)
    p.add_argument("--out", default="metrics.json")
    p.set_defaults(func=cmd_metrics)
    return parser


def _subparser(parser, name):
    for action in parser._subparsers._group_actions:
        return action.choices[name]


def _config_defaults(sub: argparse.ArgumentParser, path) -> dict:
    """Read a flat key = value file into typed defaults for ``sub``."""
    path = _existing(path, "config file")
    cp = configparser.ConfigParser(interpolation=None)
    text = path.read_text()
    if not text.lstrip().startswith("[pipeline]"):
        text = "[pipeline]\n" + text
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise CLIError(f"cannot parse {path}: {e}")
    actions = {a.dest: a for a in sub._actions}
    values = {}
    for key, raw in cp["pipeline"].items():
        dest = key.replace("-", "_")
        action = actions.get(dest)
        if action is None or dest in ("help", "config"):
            raise CLIError(f"unknown key {key!r} in {path}")
        if isinstance(action, argparse._StoreTrueAction):
            values[dest] = _on_off(raw)
        elif action.type is not None:
            try:
                values[dest] = action.type(raw)
            except (ValueError, argparse.ArgumentTypeError) as e:
                raise CLIError(f"bad value for {key!r} in {path}: {e}")
        else:
            values[dest] = raw
    return values


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    try:
        if args.config is not None:
            sub = _subparser(parser, args.command)
            sub.set_defaults(**_config_defaults(sub, args.config))
            args = parser.parse_args(argv)
        return args.func(args)
    except (CLIError, OSError, ValueError, RuntimeError) as e:
        print(f"orthovis {args.command}: error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
