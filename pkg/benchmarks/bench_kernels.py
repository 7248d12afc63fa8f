"""Compare the compiled ray kernels with the numpy fallback.

Times full-frame ray casting and the line-of-sight test used by the
oracle detector on generated plants, checks both backends agree, and
prints the speed-up. Run with ``python benchmarks/bench_kernels.py``.
"""

import argparse
import math
import timeit

import numpy as np

from vpoc import _kernels_py
from vpoc.scene import CameraIntrinsics, CameraPose, GROUND_Z, _camera_rays, _silhouette_points, generate_plant, pose_to_world

try:
    from vpoc import _kernels as _compiled
except ImportError:  # pragma: no cover - depends on the build
    _compiled = None


def workload(seed, size):
    scene = generate_plant(seed)
    pose = CameraPose(0.7, math.radians(45), 0.5)
    tf = pose_to_world(pose)
    dirs = np.ascontiguousarray(_camera_rays(size, size, CameraIntrinsics().fov) @ tf.rotation.T)
    origins = np.ascontiguousarray(np.broadcast_to(tf.origin, dirs.shape))
    eye = np.ascontiguousarray(pose.position)
    b = scene.berries[0]
    pts = _silhouette_points(b.center, b.radius, eye, 64)
    return scene, origins, dirs, eye, pts


def bench(impl, scene, origins, dirs, eye, pts, repeat):
    s, d = scene.sphere_array, scene.disk_array
    cast = min(timeit.repeat(lambda: impl.cast_rays(origins, dirs, s, d, GROUND_Z), number=1, repeat=repeat))
    los = min(timeit.repeat(lambda: impl.segments_blocked(pts, eye, s, d, 0), number=10, repeat=repeat)) / 10
    return cast, los


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--size", type=int, default=64, help="frame width and height in pixels")
    p.add_argument("--plants", type=int, default=5)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    backends = [("numpy", _kernels_py)] + ([("cython", _compiled)] if _compiled else [])
    totals = {name: np.zeros(2) for name, _ in backends}
    for seed in range(args.plants):
        w = workload(seed, args.size)
        scene, origins, dirs, eye, pts = w
        ref = _kernels_py.cast_rays(origins, dirs, scene.sphere_array, scene.disk_array, GROUND_Z)
        for name, impl in backends:
            got = impl.cast_rays(origins, dirs, scene.sphere_array, scene.disk_array, GROUND_Z)
            assert np.array_equal(got[1], ref[1]) and np.array_equal(got[2], ref[2]), f"{name} disagrees on plant {seed}"
            totals[name] += bench(impl, *w, args.repeat)
    print(f"{args.plants} plants, {args.size}x{args.size} rays per frame, best of {args.repeat}")
    print(f"{'backend':>8} {'cast frame (ms)':>16} {'line of sight (us)':>19}")
    for name, (cast, los) in totals.items():
        print(f"{name:>8} {cast / args.plants * 1e3:16.3f} {los / args.plants * 1e6:19.1f}")
    if _compiled:
        (c0, l0), (c1, l1) = totals["numpy"], totals["cython"]
        print(f"speed-up: cast {c0 / c1:.1f}x, line of sight {l0 / l1:.1f}x")
    else:
        print("compiled extension not available; only the numpy backend was timed")


if __name__ == "__main__":
    main()
