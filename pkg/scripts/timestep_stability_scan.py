#!/usr/bin/env python3
"""Scan time steps for the explicit scheme's stability threshold.

The explicit curvature force amplifies the highest resolvable boundary
mode by |s_max| dt per step, so the scheme holds only under a very small
step; this script locates the empirical threshold and contrasts it with
the implicit scheme at the same resolution.
"""
import argparse

from heleshaw.geometry import PolarShapeSpec, sample_polar_boundary
from heleshaw.mesh import MeshPolicy, generate_mesh
from heleshaw.schemes import SchemeConfig, run_step


def survives(scheme, dt, n_steps, n_boundary):
    policy = MeshPolicy(boundary_vertex_count=n_boundary, interior_target_edge=0.15)
    mesh = generate_mesh(
        sample_polar_boundary(PolarShapeSpec(1.0, ((2, 0.05, 0.0),)), n_boundary),
        policy)
    cfg = SchemeConfig(sigma=0.5, dt=dt, t_end=n_steps * dt, scheme=scheme,
                       mesh_policy=policy)
    try:
        for _ in range(n_steps):
            _, _, mesh, rep = run_step(mesh, cfg)
            if not rep.monotone:
                return False
    except Exception:
        return False
    return True


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--boundary-vertices", type=int, default=128)
    ap.add_argument("--steps", type=int, default=50)
    args = ap.parse_args()

    print(f"n_boundary = {args.boundary_vertices}, window = {args.steps} steps")
    for k in range(12):
        dt = 1e-7 * 2**k
        ok_e = survives("explicit", dt, args.steps, args.boundary_vertices)
        print(f"dt = {dt:9.3e}: explicit {'stable' if ok_e else 'UNSTABLE'}")
        if not ok_e:
            ok_n = survives("newton", dt, args.steps, args.boundary_vertices)
            print(f"             newton   {'stable' if ok_n else 'UNSTABLE'} "
                  "at the same step")
            break


if __name__ == "__main__":
    main()
