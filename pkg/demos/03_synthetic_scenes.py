"""Synthetic scene generator tour plus on-disk format round trips.

Each sequence is a textured world rendered along a camera trajectory,
with per-frame ground-truth depth and camera poses. Sequences are saved
as PNG images, PFM depth maps, and a poses CSV, and reload bit-exactly.
"""

import os
import tempfile

import numpy as np

from motiondepth.data import (
    SceneSpec,
    generate_synthetic,
    load_pfm,
    load_sequence,
    save_pfm,
    save_sequence,
)


def main():
    for geometry in ("plane", "height_field", "sprites"):
        for trajectory in ("straight", "arc", "spline"):
            spec = SceneSpec(geometry=geometry, trajectory=trajectory,
                             frame_count=4, texture_seed=11)
            sample = generate_synthetic(spec, seed=4)
            depths = np.stack([f.gt_depth for f in sample.frames])
            t_norms = [np.linalg.norm(f.motion.translation) for f in sample.frames[1:]]
            print(f"{geometry:>12} / {trajectory:<8}  depth range "
                  f"[{depths.min():6.2f}, {depths.max():6.2f}]  "
                  f"step sizes {np.round(t_norms, 3)}")

    # Same spec and seed always render the same sequence; the texture seed
    # changes appearance while geometry and motion stay put.
    spec = SceneSpec(geometry="sprites", frame_count=3)
    a = generate_synthetic(spec, seed=9)
    b = generate_synthetic(spec, seed=9)
    print(f"\nsame seed reproduces rgb exactly: "
          f"{all(np.array_equal(x.rgb, y.rgb) for x, y in zip(a.frames, b.frames))}")

    with tempfile.TemporaryDirectory() as root:
        save_sequence(root, "tour", a)
        listing = sorted(os.listdir(os.path.join(root, "tour")))
        print(f"sequence directory: {listing}")
        back = load_sequence(os.path.join(root, "tour"), "tour")
        rgb_ok = all(np.array_equal(x.rgb, y.rgb) for x, y in zip(a.frames, back.frames))
        d_ok = all(np.array_equal(x.gt_depth, y.gt_depth) for x, y in zip(a.frames, back.frames))
        print(f"round trip rgb exact: {rgb_ok}, depth exact: {d_ok}")

        # PFM is a raw float32 container, so arbitrary maps survive untouched.
        noise = np.random.default_rng(1).gamma(2.0, 5.0, size=(17, 23)).astype(np.float32)
        path = os.path.join(root, "noise.pfm")
        save_pfm(path, noise)
        print(f"pfm byte-exact round trip: {np.array_equal(load_pfm(path), noise)}")


if __name__ == "__main__":
    main()
