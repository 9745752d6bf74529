"""Ray-casting throughput of the compiled kernel against the numpy fallback.

Usage: python benchmarks/bench_raycast.py [--width 128 --height 96 --repeats 5]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from reflnbv.bvh import BACKENDS
from reflnbv.geometry import PinholeCamera, RigidPose
from reflnbv.mesh import bent_plate, icosphere, plate


def camera(width, height):
    pose = RigidPose.look_at((0.0, -150.0, 350.0), (0.0, 0.0, 0.0), (0.0, 1.0, 0.0))
    fx = 1.5 * width
    return PinholeCamera(fx, fx, (width - 1) / 2, (height - 1) / 2, width, height, pose)


def best_time(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--width", type=int, default=128)
    ap.add_argument("--height", type=int, default=96)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args(argv)

    cam = camera(args.width, args.height)
    dirs = cam.ray_directions()
    origins = np.broadcast_to(cam.center, dirs.shape)
    meshes = {"plate": plate(100, 100, 8), "bent-plate": bent_plate(),
              "icosphere-3": icosphere(50, 3), "icosphere-5": icosphere(50, 5)}
    print(f"{args.width}x{args.height} rays, best of {args.repeats}")
    print(f"{'mesh':<12} {'tris':>6} " + " ".join(f"{b + ' ms':>12}" for b in BACKENDS) + "  speedup")
    for name, mesh in meshes.items():
        bvh = mesh.bvh
        ref = None
        ms = {}
        for backend in BACKENDS:
            t, tri = bvh.intersect(origins, dirs, backend=backend)
            if ref is None:
                ref = (t, tri)
            elif not (np.array_equal(tri, ref[1]) and np.allclose(t, ref[0], equal_nan=True)):
                raise SystemExit(f"{name}: backends disagree")
            ms[backend] = 1e3 * best_time(lambda: bvh.intersect(origins, dirs, backend=backend),
                                          args.repeats)
        speed = ms["python"] / ms["compiled"] if "compiled" in ms else float("nan")
        print(f"{name:<12} {len(mesh):>6} " + " ".join(f"{v:>12.2f}" for v in ms.values())
              + f"  {speed:6.1f}x")


if __name__ == "__main__":
    main()
