#!/usr/bin/env python3
"""Builds the shipped skeleton data files.

Searches twist/rest angles (multiples of 90 degrees) for every joint stack so
that joint axes and bone directions match the anatomical layout below, then
evaluates the rest pose with a plain numpy matrix chain and writes:

  crates/core/data/topology.toml
  crates/core/data/constraints.toml

Camera-space convention of the rest pose: +x is the subject's left, +y points
down, +z points away from the camera (the subject faces the camera).
"""
import itertools
import os

import numpy as np

LEFT = np.array([1.0, 0.0, 0.0])
DOWN = np.array([0.0, 1.0, 0.0])
BACK = np.array([0.0, 0.0, 1.0])
UP, RIGHT, FWD = -DOWN, -LEFT, -BACK
ANGLES = [0, 90, -90, 180]


def dh(a, d, alpha_deg, theta_deg):
    al, th = np.radians(alpha_deg), np.radians(theta_deg)
    ca, sa, ct, st = np.cos(al), np.sin(al), np.cos(th), np.sin(th)
    m = np.array(
        [
            [ct, -st, 0.0, a],
            [st * ca, ct * ca, -sa, -d * sa],
            [st * sa, ct * sa, ca, d * ca],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )
    m[np.abs(m) < 1e-12] = 0.0
    return m


KEYPOINTS = [
    "pelvis", "r_hip", "r_knee", "r_ankle", "l_hip", "l_knee", "l_ankle",
    "spine", "thorax", "head", "l_shoulder", "l_elbow", "l_wrist",
    "r_shoulder", "r_elbow", "r_wrist",
]
KP = {n: i for i, n in enumerate(KEYPOINTS)}

# (joint, dof, bone field, bone length, keypoint, axis constraints, final x, final y)
# Bone length sits on the first row of the child stack.
STACKS = {
    "root": (3, None, 0.0, "pelvis", [None, None, None], UP, LEFT),
    "spine": (3, "a", 0.23, "spine", [LEFT, None, None], UP, None),
    "thorax": (3, "a", 0.25, "thorax", [LEFT, None, None], UP, LEFT),
    "neck": (3, None, 0.0, None, [LEFT, None, None], UP, None),
    "head": (1, "a", 0.24, "head", [LEFT], None, None),
    "r_hip": (3, "d", 0.13, "r_hip", [RIGHT, None, None], DOWN, None),
    "r_knee": (1, "a", 0.45, "r_knee", [RIGHT], DOWN, None),
    "r_ankle": (1, "a", 0.44, "r_ankle", [RIGHT], None, None),
    "l_hip": (3, "d", 0.13, "l_hip", [LEFT, None, None], DOWN, None),
    "l_knee": (1, "a", 0.45, "l_knee", [RIGHT], DOWN, None),
    "l_ankle": (1, "a", 0.44, "l_ankle", [RIGHT], None, None),
    "l_shoulder": (3, "d", 0.15, "l_shoulder", [LEFT, None, None], DOWN, None),
    "l_elbow": (1, "a", 0.28, "l_elbow", [RIGHT], DOWN, None),
    "l_wrist": (1, "a", 0.25, "l_wrist", [RIGHT], None, None),
    "r_shoulder": (3, "d", 0.15, "r_shoulder", [RIGHT, None, None], DOWN, None),
    "r_elbow": (1, "a", 0.28, "r_elbow", [RIGHT], DOWN, None),
    "r_wrist": (1, "a", 0.25, "r_wrist", [RIGHT], None, None),
}

BRANCHES = [
    ("torso_head", ["root", "spine", "thorax", "neck", "head"]),
    ("right_leg", ["root", "r_hip", "r_knee", "r_ankle"]),
    ("left_leg", ["root", "l_hip", "l_knee", "l_ankle"]),
    ("left_arm", ["root", "spine", "thorax", "l_shoulder", "l_elbow", "l_wrist"]),
    ("right_arm", ["root", "spine", "thorax", "r_shoulder", "r_elbow", "r_wrist"]),
]

# Delta bounds in degrees per joint axis. Entries are (negative, positive) in
# anatomical terms and get mapped to the sign convention of the searched axis.
RANGES = {
    "root": [(-45, 45)] * 3,
    "spine": [(-30, 45), (-30, 30), (-30, 30)],
    "thorax": [(-30, 45), (-30, 30), (-30, 30)],
    "neck": [(-45, 45), (-45, 45), (-60, 60)],
    "head": [(-30, 30)],
    "hip": [(-30, 120), (-30, 45), (-45, 45)],
    "ankle": [(-30, 30)],
    "shoulder": [(-45, 170), (-30, 150), (-90, 90)],
    "wrist": [(-45, 45)],
}


def search(frame, n, axes, final_x, final_y, bone):
    best = None
    for combo in itertools.product(ANGLES, repeat=2 * n):
        al, th = list(combo[:n]), list(combo[n:])
        m = frame.copy()
        zs = []
        for k in range(n):
            a = bone[1] if (k == 0 and bone and bone[0] == "a") else 0.0
            d = bone[1] if (k == 0 and bone and bone[0] == "d") else 0.0
            m = m @ dh(a, d, al[k], th[k])
            zs.append(m[:3, 2].copy())
        if final_x is not None and not np.allclose(m[:3, 0], final_x):
            continue
        if final_y is not None and not np.allclose(m[:3, 1], final_y):
            continue
        if any(c is not None and not np.allclose(z, c) for z, c in zip(zs, axes)):
            continue
        if n == 3 and any(abs(zs[i] @ zs[j]) > 1e-9 for i in range(3) for j in range(i + 1, 3)):
            continue
        cost = sum(1 for x in al + th if x != 0)
        if best is None or cost < best[0]:
            best = (cost, al, th, m, zs)
    if best is None:
        raise SystemExit(f"no solution for axes={axes} x={final_x} y={final_y} frame=\n{frame}")
    return best[1], best[2], best[3], best[4]


def main():
    root_dir = os.path.join(os.path.dirname(__file__), "..", "crates", "core", "data")
    designed = {}
    axes_of = {}
    frames_after = {}
    rows = []
    theta_ids = {}
    length_ids = {}
    next_theta = 0
    length_order = []
    for b, (bname, stacks) in enumerate(BRANCHES):
        frame = np.eye(4)
        r = 0
        for s in stacks:
            n, field, length, kp, axes, fx, fy = STACKS[s]
            bone = (field, length) if field else None
            if s not in designed:
                al, th, frame_out, zs = search(frame, n, axes, fx, fy, bone)
                designed[s] = (al, th)
                axes_of[s] = zs
                frames_after[s] = frame_out
                for k in range(n):
                    theta_ids[(s, k)] = next_theta
                    next_theta += 1
                if field:
                    length_order.append(s)
            al, th = designed[s]
            shared = any(s in st for _, st in BRANCHES[:b])
            for k in range(n):
                row = {
                    "branch": b,
                    "row": r,
                    "joint": s,
                    "a": length if (k == 0 and field == "a") else 0.0,
                    "d": length if (k == 0 and field == "d") else 0.0,
                    "alpha": float(al[k]),
                    "theta": float(th[k]),
                    "theta_param": (s, k),
                    "length": (field if k == 0 else None),
                    "keypoint": kp if k == 0 else None,
                    "shared": shared,
                }
                rows.append(row)
                frame = frame @ dh(row["a"], row["d"], row["alpha"], row["theta"])
                r += 1
    assert next_theta == 33
    for i, s in enumerate(length_order):
        length_ids[s] = 33 + i
    assert len(length_ids) == 15

    # Independent rest-pose evaluation: full 4x4 products, per branch.
    rest = [None] * 16
    for b, _ in enumerate(BRANCHES):
        m = np.eye(4)
        for row in [x for x in rows if x["branch"] == b]:
            m = m @ dh(row["a"], row["d"], row["alpha"], row["theta"])
            if row["keypoint"] is not None:
                p = m[:3, 3].copy()
                k = KP[row["keypoint"]]
                if rest[k] is not None:
                    assert np.allclose(rest[k], p, atol=1e-12)
                rest[k] = p
    # Pelvis is emitted by the first root row of every branch.
    assert all(p is not None for p in rest)

    def sign_of(joint, k, probe_kp, probe_dir):
        """+1 if a positive delta on this axis moves the probe keypoint along probe_dir."""
        eps = 1e-3
        pos = []
        for delta in (eps, -eps):
            branch = next(b for b, (_, st) in enumerate(BRANCHES) if joint in st and any(
                STACKS[x][3] == probe_kp for x in st))
            m = np.eye(4)
            out = None
            for row in [x for x in rows if x["branch"] == branch]:
                th = row["theta"] + (np.degrees(delta) if row["theta_param"] == (joint, k) else 0.0)
                m = m @ dh(row["a"], row["d"], row["alpha"], th)
                if row["keypoint"] == probe_kp:
                    out = m[:3, 3].copy()
            pos.append(out)
        v = (pos[0] - pos[1]) @ probe_dir
        assert abs(v) > 1e-6, (joint, k, probe_kp)
        return 1 if v > 0 else -1

    def oriented(rng, sgn):
        lo, hi = rng
        return (lo, hi) if sgn > 0 else (-hi, -lo)

    bounds = {}
    names = {}
    for s, (al, th) in designed.items():
        for k in range(len(al)):
            pid = theta_ids[(s, k)]
            names[pid] = f"{s}.{k}"
            if s.endswith("knee"):
                # Negative delta must fold the shank backwards.
                assert sign_of(s, 0, s.replace("knee", "ankle"), BACK) == -1
                bounds[pid] = (-180.0, 0.0)
            elif s.endswith("elbow"):
                assert sign_of(s, 0, s.replace("elbow", "wrist"), FWD) == 1
                bounds[pid] = (0.0, 150.0)
            elif s.endswith("hip") or s.endswith("shoulder"):
                child = s.replace("hip", "knee").replace("shoulder", "elbow")
                side = LEFT if s.startswith("l_") else RIGHT
                kind = "hip" if s.endswith("hip") else "shoulder"
                if k == 0:
                    bounds[pid] = oriented(RANGES[kind][0], sign_of(s, 0, child, FWD))
                elif abs(axes_of[s][k] @ FWD) > 0.5:
                    bounds[pid] = oriented(RANGES[kind][1], sign_of(s, k, child, side))
                else:
                    bounds[pid] = tuple(float(x) for x in RANGES[kind][2])
            elif s in ("spine", "thorax") and k == 0:
                probe = "thorax" if s == "spine" else "head"
                bounds[pid] = oriented(RANGES[s][0], sign_of(s, 0, probe, FWD))
            else:
                key = s.split("_")[-1] if "_" in s else s
                bounds[pid] = tuple(float(x) for x in RANGES[key][k])
    for s, pid in length_ids.items():
        rest_len = STACKS[s][2]
        names[pid] = f"{s}.bone_in"
        bounds[pid] = (-0.2 * rest_len, 0.2 * rest_len)

    def fmt(x):
        return repr(float(round(x, 12)))

    with open(os.path.join(root_dir, "topology.toml"), "w") as f:
        f.write("# Human DH skeleton: 5 branches, 33 joint angles, 15 bone lengths.\n")
        f.write("# Angles in degrees, lengths in meters. Generated by scripts/build_topology.py.\n")
        f.write("# Rows repeated across branches (shared = true) must match their first\n")
        f.write("# occurrence exactly and reference the same parameter ids.\n\n")
        f.write("root_keypoint = 0\n\n")
        f.write("# Rest pose (zero deltas, identity global transform), camera space, meters.\n")
        f.write("rest_pose = [\n")
        for i, p in enumerate(rest):
            f.write(f"  [{fmt(p[0])}, {fmt(p[1])}, {fmt(p[2])}],  # {KEYPOINTS[i]}\n")
        f.write("]\n\n")
        for i, n in enumerate(KEYPOINTS):
            f.write(f"[[keypoints]]\nid = {i}\nname = \"{n}\"\n\n")
        for b, (bname, _) in enumerate(BRANCHES):
            f.write(f"[[branches]]\nid = {b}\nname = \"{bname}\"\n\n")
        for row in rows:
            s, k = row["theta_param"]
            f.write("[[rows]]\n")
            f.write(f"branch = {row['branch']}\nrow = {row['row']}\njoint = \"{s}\"\n")
            f.write(f"a = {fmt(row['a'])}\nd = {fmt(row['d'])}\n")
            f.write(f"alpha = {fmt(row['alpha'])}\ntheta = {fmt(row['theta'])}\n")
            vary = ["theta"] + ([row["length"]] if row["length"] else [])
            f.write("vary = [" + ", ".join(f'"{v}"' for v in vary) + "]\n")
            f.write(f"theta_param = {theta_ids[(s, k)]}\n")
            if row["length"]:
                f.write(f"length_param = {length_ids[s]}\n")
            f.write(f"shared = {'true' if row['shared'] else 'false'}\n")
            if row["keypoint"] is not None:
                f.write(f"keypoint = {KP[row['keypoint']]}\n")
            f.write("\n")

    with open(os.path.join(root_dir, "constraints.toml"), "w") as f:
        f.write("# Per-parameter delta bounds relative to the rest configuration.\n")
        f.write("# Angle bounds in degrees, length bounds in meters (+-20% of rest length).\n")
        f.write("# Generated by scripts/build_topology.py.\n\n")
        for pid in range(48):
            lo, hi = bounds[pid]
            kind = "length" if pid >= 33 else "angle"
            f.write(f"[[bounds]]\nparam = {pid}\nname = \"{names[pid]}\"\nkind = \"{kind}\"\n")
            f.write(f"min = {fmt(lo)}\nmax = {fmt(hi)}\n\n")

    for i, p in enumerate(rest):
        print(f"{KEYPOINTS[i]:>11}: {p.round(4)}")


if __name__ == "__main__":
    main()
