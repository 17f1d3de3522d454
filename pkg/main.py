"""
GSCodec - Command Line Interface
================================
Encode, decode, inspect and evaluate Gaussian Splat scenes.

Sub-commands:
- encode     PLY (static) or NPZ (dynamic GOF sequence) -> .gsc container
- decode     .gsc container -> PLY or NPZ
- inspect    per-component memory breakdown of a container
- render     reference CPU render of a container or PLY from a camera JSON
- eval       PSNR/SSIM between two directories of images
- rd-sweep   rate-distortion sweep over presets / config files
"""

import os
import sys
import argparse
from typing import Any, Dict, List, Optional

# Add src to path
sys.path.insert(0, os.path.dirname(__file__))

from src.config import (
    DYNAMIC_PRESET,
    PRESET_NAMES,
    STATIC_PRESET,
    apply_overrides,
    canonical_attribute,
    load_config,
    parse_route,
)
from src.container import (
    decode_dynamic,
    decode_static,
    encode_dynamic_detailed,
    encode_static_detailed,
    inspect,
    is_dynamic_container,
    read_header,
)
from src.data_loader import is_dynamic_path, load_dynamic, read_ply, save_dynamic, write_ply
from src.dyncore import count_parameters
from src.errors import ConfigError, GSCodecError, ParameterError
from src.evaluation import QUALITY_NOTE, compare_curves, eval_dirs, load_sweep, rd_sweep, resolve_configs
from src.plas import export_planes
from src.preprocess import opacity_below_fraction
from src.render import load_cameras, render, render_at_time


def _floats(text: str, count: int, flag: str) -> List[float]:
    parts = [p for p in text.split(",") if p.strip()]
    if len(parts) != count:
        raise ConfigError(f"{flag} expects {count} comma-separated values, got '{text}'")
    return [float(p) for p in parts]


def build_overrides(args) -> Dict[str, Any]:
    """Collect CLI flags into the nested override table used by config files."""
    values: Dict[str, Any] = {}
    prune: Dict[str, Any] = {}
    if args.prune_opacity is not None:
        prune["opacity"] = args.prune_opacity
    if args.prune_scale:
        prune["scale"] = _floats(args.prune_scale, 2, "--prune-scale")
    if args.prune_outliers:
        k, m = _floats(args.prune_outliers, 2, "--prune-outliers")
        prune["outliers"] = [int(k), m]
    if args.sh_mask is not None:
        prune["sh_mask"] = args.sh_mask
    if args.static_mask:
        eps, samples = _floats(args.static_mask, 2, "--static-mask")
        prune["static_mask"] = eps
        prune["static_samples"] = int(samples)
    if prune:
        values["prune"] = prune

    routes: Dict[str, Dict[str, Any]] = {}
    for item in args.route or []:
        attr, codec, bits = parse_route(item)
        routes.setdefault(attr, {})["codec"] = codec
        if bits is not None:
            routes[attr]["bits"] = bits
    for item in args.bits or []:
        attr, sep, bits = item.partition("=")
        if not sep or not bits.strip().isdigit():
            raise ConfigError(f"--bits expects attr=b, got '{item}'")
        routes.setdefault(canonical_attribute(attr.strip()), {})["bits"] = int(bits)
    if routes:
        values["routes"] = routes

    if args.gof_len is not None:
        values["gof_len"] = args.gof_len
    if args.seed is not None:
        values["seed"] = args.seed
    return values


def cmd_encode(args):
    dynamic = is_dynamic_path(args.input)
    preset_name = args.preset or (DYNAMIC_PRESET if dynamic else STATIC_PRESET)

    print("=" * 60)
    print("🗜️  GSCodec - Encode")
    print("=" * 60)
    config = load_config(args.config, preset_name)
    config = apply_overrides(config, build_overrides(args))
    print(f"📋 Preset: {config.preset}")
    print(f"   Input:  {args.input}")

    print("\n" + "=" * 60)
    if dynamic:
        dynclouds, segments, fps = load_dynamic(args.input)
        config.fps = fps
        params = sum(count_parameters(d)["total"] for d in dynclouds)
        print(f"🎞️  {len(dynclouds)} GOF(s), {segments[-1].f_end} frames @ {fps:g} fps, {params:,} stored floats")
        result = encode_dynamic_detailed(dynclouds, config, segments)
    else:
        cloud = read_ply(args.input)
        threshold = config.prune.opacity
        if threshold is not None:
            print(f"🔎 {100.0 * opacity_below_fraction(cloud, threshold):.1f}% of points below opacity {threshold:g}")
        result = encode_static_detailed(cloud, config)

    for k, report in enumerate(result.prune_reports):
        print(f"   Section {k}: {report.summary()}")

    with open(args.output, "wb") as f:
        f.write(result.data)

    if args.export_planes:
        paths = export_planes(result.planes, args.export_planes)
        print(f"🖼️  {len(paths)} plane(s) written to {args.export_planes}")

    print("\n" + "=" * 60)
    print(f"✅ Wrote {len(result.data):,} bytes to {args.output}")
    print("=" * 60)


def cmd_decode(args):
    with open(args.input, "rb") as f:
        data = f.read()
    header, _ = read_header(data)

    print("=" * 60)
    print("📦 GSCodec - Decode")
    print("=" * 60)
    if header.dynamic:
        if not is_dynamic_path(args.output):
            raise SystemExit("❌ dynamic containers decode to .npz")
        dynclouds = decode_dynamic(data)
        save_dynamic(args.output, dynclouds, header.segments, header.fps)
        print(f"✅ {len(dynclouds)} GOF(s) written to {args.output}")
    else:
        cloud = decode_static(data)
        write_ply(args.output, cloud)
        print(f"✅ {cloud.n:,} splats written to {args.output}")


def cmd_inspect(args):
    with open(args.input, "rb") as f:
        report = inspect(f.read())
    if args.format == "csv":
        sys.stdout.write(report.format("csv"))
        return
    print("=" * 60)
    print(f"📊 Memory breakdown: {args.input}")
    print("=" * 60)
    print(report.format("table"))


def _load_scene(path: str, gof: int):
    """Static cloud, or (dynamic cloud, segment) for the requested GOF."""
    if path.lower().endswith(".ply"):
        return read_ply(path), None
    if is_dynamic_path(path):
        dynclouds, segments, _ = load_dynamic(path)
        return dynclouds[gof], segments[gof]
    with open(path, "rb") as f:
        data = f.read()
    if is_dynamic_container(data):
        header, _ = read_header(data)
        return decode_dynamic(data, [gof])[0], header.segments[gof]
    return decode_static(data), None


def _gof_for_frame(path: str, frame: int) -> int:
    if is_dynamic_path(path):
        segments = load_dynamic(path)[1]
    else:
        with open(path, "rb") as f:
            segments = read_header(f.read())[0].segments
    for segment in segments:
        if segment.f_start <= frame < segment.f_end:
            return segment.index
    raise SystemExit(f"❌ frame {frame} is outside the sequence")


def cmd_render(args):
    cameras = load_cameras(args.camera)
    gof = args.gof if args.frame is None else _gof_for_frame(args.input, args.frame)
    scene, segment = _load_scene(args.input, gof)
    background = tuple(_floats(args.background, 3, "--background"))

    stem, ext = os.path.splitext(args.out)
    for k, camera in enumerate(cameras):
        if segment is None:
            image = render(scene, camera, background)
        else:
            t = segment.frame_to_time(args.frame) if args.frame is not None else args.time
            image = render_at_time(scene, camera, t, background)
        path = args.out if len(cameras) == 1 else f"{stem}_{k:03d}{ext}"
        image.save(path)
        print(f"🖼️  {image.width}x{image.height} -> {path}")


def cmd_eval(args):
    frame = eval_dirs(args.ref, args.test)
    if args.format == "csv":
        sys.stdout.write(frame.to_csv(index=False))
        return
    print("=" * 60)
    print("📈 Image quality")
    print("=" * 60)
    print(frame.to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    print(f"\n💡 {QUALITY_NOTE}")


def cmd_rd_sweep(args):
    cameras = load_cameras(args.cameras)
    if args.configs:
        configs = load_sweep(args.configs)
    else:
        configs = resolve_configs(args.presets or [STATIC_PRESET])

    print("=" * 60)
    print("📉 GSCodec - RD sweep")
    print("=" * 60)
    print(f"   Configurations: {len(configs)}")
    print(f"   Cameras:        {len(cameras)}")

    if is_dynamic_path(args.input):
        dynclouds, segments, fps = load_dynamic(args.input)
        for config in configs.values():
            config.fps = fps
        frame = rd_sweep(dynclouds, cameras, configs, segments, frames_per_gof=args.frames_per_gof)
    else:
        frame = rd_sweep(read_ply(args.input), cameras, configs)

    frame.to_csv(args.out, index=False)
    print("\n" + "-" * 60)
    print(frame.to_string(index=False))
    print(f"\n📏 Rate unit: {frame.attrs['rate_unit']}")
    print(f"💡 {frame.attrs['note']}")

    if args.baseline and args.test:
        try:
            deltas = compare_curves(frame, args.baseline, args.test)
            print(f"\n⚖️  {args.test} vs {args.baseline}: "
                  f"BD-rate {deltas['bd_rate']:+.2f}%, BD-PSNR {deltas['bd_psnr']:+.3f} dB")
        except ParameterError as exc:
            print(f"\n⚠️  Curves not comparable: {exc}")

    print("\n" + "=" * 60)
    print(f"✅ RD table saved to {args.out}")
    print("=" * 60)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='GSCodec - Gaussian Splat compression')
    sub = parser.add_subparsers(dest='command', required=True)

    enc = sub.add_parser('encode', help='Compress a PLY or dynamic NPZ scene')
    enc.add_argument('input', help='Input .ply (static) or .npz (dynamic)')
    enc.add_argument('output', help='Output .gsc container')
    enc.add_argument('--preset', choices=PRESET_NAMES, default=None,
                     help='Base preset (default: by input type)')
    enc.add_argument('--config', default=None, help='key = value override file')
    enc.add_argument('--prune-opacity', type=float, default=None, help='Opacity prune threshold')
    enc.add_argument('--prune-scale', default=None, help='min,max of max(exp(log_scale))')
    enc.add_argument('--prune-outliers', default=None, help='k,m for k-NN outlier removal')
    enc.add_argument('--sh-mask', type=float, default=None, help='SH N energy threshold')
    enc.add_argument('--static-mask', default=None, help='eps,samples for the motion mask')
    enc.add_argument('--route', action='append', help='attr=codec[:bits] (repeatable)')
    enc.add_argument('--bits', action='append', help='attr=b (repeatable)')
    enc.add_argument('--gof-len', type=int, default=None, help='Frames per GOF')
    enc.add_argument('--seed', type=int, default=None, help='PLAS / k-means seed')
    enc.add_argument('--export-planes', default=None, help='Directory to dump PNG planes into')
    enc.set_defaults(func=cmd_encode)

    dec = sub.add_parser('decode', help='Decompress a container')
    dec.add_argument('input')
    dec.add_argument('output', help='.ply for static, .npz for dynamic containers')
    dec.set_defaults(func=cmd_decode)

    ins = sub.add_parser('inspect', help='Memory breakdown per component')
    ins.add_argument('input')
    ins.add_argument('--format', choices=['table', 'csv'], default='table')
    ins.set_defaults(func=cmd_inspect)

    ren = sub.add_parser('render', help='Render a scene from camera JSON')
    ren.add_argument('input', help='.gsc, .ply or .npz')
    ren.add_argument('--camera', required=True, help='Camera JSON (object or list)')
    ren.add_argument('--time', type=float, default=0.0, help='Normalised time within the GOF')
    ren.add_argument('--gof', type=int, default=0, help='GOF index for dynamic scenes')
    ren.add_argument('--frame', type=int, default=None, help='Absolute frame (overrides --gof/--time)')
    ren.add_argument('--background', default='0,0,0', help='r,g,b in [0, 1]')
    ren.add_argument('--out', required=True, help='Output PNG (suffixed per camera for lists)')
    ren.set_defaults(func=cmd_render)

    ev = sub.add_parser('eval', help='PSNR/SSIM between two image directories')
    ev.add_argument('--ref', required=True)
    ev.add_argument('--test', required=True)
    ev.add_argument('--format', choices=['table', 'csv'], default='table')
    ev.set_defaults(func=cmd_eval)

    rd = sub.add_parser('rd-sweep', help='Rate-distortion sweep')
    rd.add_argument('input', help='.ply or dynamic .npz')
    rd.add_argument('--cameras', required=True, help='Camera JSON')
    rd.add_argument('--configs', default=None, help='Sweep file (TOML)')
    rd.add_argument('--presets', nargs='+', default=None, help='Preset names when no sweep file is given')
    rd.add_argument('--frames-per-gof', type=int, default=3)
    rd.add_argument('--baseline', default=None, help='Curve name to compare against')
    rd.add_argument('--test', default=None, help='Curve name compared with --baseline')
    rd.add_argument('--out', default='rd.csv')
    rd.set_defaults(func=cmd_rd_sweep)
    return parser


def main(argv: Optional[List[str]] = None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except GSCodecError as exc:
        print(f"❌ {type(exc).__name__}: {exc}")
        sys.exit(1)


if __name__ == '__main__':
    main()
