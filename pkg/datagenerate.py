"""
GSCodec - Synthetic Scene Generator
===================================
Writes a procedurally generated scene for trying out the codec:

- static.ply     clustered static cloud
- dynamic.npz    GOF sequence with moving and static points
- cameras.json   orbit cameras looking at the origin
"""

import os
import sys
import argparse

import numpy as np

sys.path.insert(0, os.path.dirname(__file__))

from src.data_loader import save_dynamic, write_ply
from src.dyncore import count_parameters
from src.render import save_cameras
from src.synthetic import make_cloud, make_dynamic_sequence, orbit_cameras


def main():
    parser = argparse.ArgumentParser(description='GSCodec - synthetic scene generator')
    parser.add_argument('--out', default='synthetic', help='Output directory')
    parser.add_argument('--points', type=int, default=50000, help='Static splats')
    parser.add_argument('--sh-degree', type=int, default=1, choices=[0, 1, 2, 3])
    parser.add_argument('--dynamic-points', type=int, default=5000, help='Splats per GOF (0 skips the sequence)')
    parser.add_argument('--frames', type=int, default=120, help='Frames in the sequence')
    parser.add_argument('--gof-len', type=int, default=30, help='Frames per GOF')
    parser.add_argument('--static-fraction', type=float, default=0.8, help='Share of points that never move')
    parser.add_argument('--fps', type=float, default=30.0)
    parser.add_argument('--cameras', type=int, default=4, help='Orbit cameras')
    parser.add_argument('--size', type=int, default=128, help='Image width and height')
    parser.add_argument('--seed', type=int, default=0)
    args = parser.parse_args()

    os.makedirs(args.out, exist_ok=True)

    print("🔵 Phase 1: Static cloud...")
    cloud = make_cloud(args.points, sh_degree=args.sh_degree, seed=args.seed)
    static_path = os.path.join(args.out, "static.ply")
    write_ply(static_path, cloud)
    print(f"   {cloud.n:,} splats, SH degree {cloud.sh_degree} -> {static_path}")

    if args.dynamic_points > 0:
        print("🟣 Phase 2: Dynamic sequence...")
        dynclouds, segments = make_dynamic_sequence(
            args.dynamic_points, args.frames, args.gof_len, args.static_fraction,
            seed=args.seed, sh_degree=args.sh_degree,
        )
        dynamic_path = os.path.join(args.out, "dynamic.npz")
        save_dynamic(dynamic_path, dynclouds, segments, args.fps)
        floats = sum(count_parameters(d)["total"] for d in dynclouds)
        print(f"   {len(segments)} GOF(s) x {args.dynamic_points:,} splats, {floats:,} floats -> {dynamic_path}")

    print("🎥 Phase 3: Cameras...")
    cameras = orbit_cameras(args.cameras, args.size, args.size)
    camera_path = os.path.join(args.out, "cameras.json")
    save_cameras(camera_path, cameras)
    print(f"   {len(cameras)} camera(s) at {args.size}x{args.size} -> {camera_path}")

    print("\n✅ Generation complete!")
    print(f"\n📊 Scene extent: {np.ptp(cloud.means, axis=0).round(3)}")


if __name__ == '__main__':
    main()
