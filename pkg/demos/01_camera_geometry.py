"""Camera model walkthrough: projection, backprojection, and reprojection.

Shows how a pinhole camera maps 3-D points to pixels, how depth plus a
pixel recovers the 3-D point, and how a rigid motion moves pixels
between two frames of a video.
"""

import numpy as np

from motiondepth.geometry import (
    Intrinsics,
    RigidTransform,
    backproject,
    compose,
    invert,
    project,
    reproject_coords,
    reprojection_field,
    rotation_from_quaternion,
    rotation_to_axis_angle,
)


def main():
    k = Intrinsics(fx=64.0, fy=64.0, s=0.0, cx=31.5, cy=31.5, width=64, height=64)
    print("intrinsics matrix:")
    print(k.matrix)

    # Round trip: a point in front of the camera projects into the image,
    # and backprojecting that pixel at the same depth recovers the point.
    point = np.array([1.5, -0.8, 12.0])
    pix, z = project(point, k)
    print(f"\npoint {point} -> pixel (i={pix.i:.3f}, j={pix.j:.3f}) at depth {z}")
    back = backproject(pix, z, k)
    print(f"backprojected: {back}  (max err {np.abs(back - point).max():.2e})")

    # A camera translating forward makes pixels stream away from the image
    # center. The reprojection field computes, for every pixel of the
    # current frame, where its scene point was visible one frame earlier.
    motion = RigidTransform(rotation=np.eye(3), translation=np.array([0.0, 0.0, 0.4]))
    depth = np.full((64, 64), 10.0)
    i_prev, j_prev, _, _ = reprojection_field(depth, motion, k)
    di = i_prev - np.arange(64)[None, :]
    dj = j_prev - np.arange(64)[:, None]
    flow = np.hypot(di, dj)
    print("\nforward motion, flat depth 10:")
    print(f"  flow at center      {flow[32, 32]:.4f} px")
    print(f"  flow at corner      {flow[0, 0]:.4f} px  (larger: points off-axis move)")

    # Halving the resolution halves the focal length and shifts the principal
    # point to keep pixel centers aligned.
    print(f"\nhalved intrinsics: {k.halved()}")

    # Rotations convert between quaternion, matrix, and axis-angle forms.
    r = rotation_from_quaternion(np.cos(0.15), 0.0, np.sin(0.15), 0.0)
    aa = rotation_to_axis_angle(r)
    print(f"\nyaw of 0.3 rad as axis-angle: {aa}")

    # Composing a motion with its inverse gives the identity.
    m = RigidTransform(rotation=r, translation=np.array([0.2, 0.0, 1.0]))
    ident = compose(invert(m), m)
    print(f"compose(inv(m), m) translation: {ident.translation}")

    # A single pixel can be chased through the motion by hand too.
    p_prev, d_prev = reproject_coords((40.0, 20.0), 10.0, motion, k)
    print(f"pixel (40, 20) at depth 10 seen from previous frame: "
          f"(i={p_prev.i:.3f}, j={p_prev.j:.3f}), depth there {d_prev:.3f}")


if __name__ == "__main__":
    main()
