"""Command-line interface: match, eval, gen, perturb.

Exit codes: 0 success, 1 numerical failure, 2 usage or I/O error.
Configuration files are flat ``key=value`` text; command-line flags override
file values.  PFM_THREADS caps the parallelism of batch matching.
"""

import argparse
import concurrent.futures
import csv
import os
import sys

import numpy as np

from . import bench, descriptors, laplacian, matio, solver, spectral
from .energy import EnergyParams, eta
from .laplacian import EigensolveError
from .mesh import MeshError, load_mesh, save_ply
from .solver import SolverOptions


class UsageError(Exception):
    pass


def _read_config(path):
    values = {}
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}: malformed config line {line!r}")
            key, val = line.split("=", 1)
            values[key.strip().replace("-", "_")] = val.strip()
    return values


def _apply_config(args, parser):
    if getattr(args, "config", None):
        file_vals = _read_config(args.config)
        for key, val in file_vals.items():
            if not hasattr(args, key):
                raise UsageError(f"unknown config key {key!r}")
            # CLI value wins when it differs from the parser default.
            if getattr(args, key) == parser.get_default(key):
                default = parser.get_default(key)
                typ = type(default) if default is not None else str
                setattr(args, key, typ(val))
    return args


def _energy_params(args):
    return EnergyParams(mu1=args.mu1, mu2=args.mu2, mu3=args.mu3,
                        mu4_5=args.mu4_5, sigma_w=args.sigma_w,
                        sigma_xi=args.sigma_xi, k=args.k)


def _solver_options(args):
    return SolverOptions(max_outer=args.max_outer,
                         cg_max_iter=args.cg_max_iter,
                         cg_grad_tol=args.cg_grad_tol)


def _load_descriptors(path, mesh, radius):
    if path:
        values = matio.load_matrix(path)
        if values.shape[0] != mesh.n_vertices:
            raise UsageError(f"{path}: descriptor rows do not match mesh")
        return descriptors.DescriptorField(
            values, radius or 0.0, np.zeros(mesh.n_vertices, dtype=bool))
    return descriptors.shot_descriptors(mesh, radius)


def _coordinate_colors(mesh):
    v = mesh.vertices
    lo, hi = v.min(axis=0), v.max(axis=0)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    return np.clip((v - lo) / span * 255.0, 0, 255).astype(np.uint8)


def run_match(args):
    os.makedirs(args.out, exist_ok=True)
    mesh_part = load_mesh(args.part)
    mesh_full = load_mesh(args.full)
    k = args.k
    basis_part = laplacian.mesh_basis(mesh_part, k)
    basis_full = laplacian.mesh_basis(mesh_full, k)
    radius = args.radius or descriptors.default_radius(mesh_full)
    desc_part = _load_descriptors(args.descriptors_part, mesh_part, radius)
    desc_full = _load_descriptors(args.descriptors_full, mesh_full, radius)
    params = _energy_params(args)
    prob, rank = solver.build_problem(basis_part, basis_full, desc_part,
                                      desc_full, mesh_full,
                                      mesh_part.total_area, params)
    result = solver.alternate(prob, params, basis_part.eigenvectors,
                              _solver_options(args))

    matio.save_matrix(os.path.join(args.out, "C.bin"), result.C)
    with open(os.path.join(args.out, "v.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["vertex", "value", "eta"])
        for i, (val, e) in enumerate(zip(result.v, eta(result.v))):
            w.writerow([i, repr(float(val)), repr(float(e))])
    with open(os.path.join(args.out, "pi.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["full_vertex", "part_vertex"])
        for i, p in enumerate(result.pi):
            w.writerow([i, int(p)])
    with open(os.path.join(args.out, "energy.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "data", "area", "mumford_shah", "slant",
                    "orthogonality", "total"])
        for it, bd in enumerate(result.energy_trace):
            w.writerow([it] + [repr(float(x)) for x in bd.as_row()])
    # Correspondence visualization: full-shape coordinate colors carried to
    # the partial shape through the point-wise map.
    colors_full = _coordinate_colors(mesh_full)
    colors_part = np.full((mesh_part.n_vertices, 3), 128, dtype=np.uint8)
    inv = solver.invert_assignment(result.pi, mesh_part.n_vertices)
    ok = inv >= 0
    colors_part[ok] = colors_full[inv[ok]]
    save_ply(mesh_full, os.path.join(args.out, "full_colored.ply"),
             colors=colors_full)
    save_ply(mesh_part, os.path.join(args.out, "part_colored.ply"),
             colors=colors_part)
    print(f"match: rank {rank}/{params.k}, "
          f"{len(result.energy_trace)} outer iterations, "
          f"final energy {result.energy_trace[-1].total:.6g}")
    return 0


def run_match_batch(args):
    with open(args.pairs) as fh:
        jobs = [line.split() for line in fh if line.strip()]
    workers = int(os.environ.get("PFM_THREADS", args.jobs))

    def one(job):
        part, full, out = job
        sub = argparse.Namespace(**vars(args))
        sub.part, sub.full, sub.out = part, full, out
        return run_match(sub)

    with concurrent.futures.ThreadPoolExecutor(max_workers=max(workers, 1)) as ex:
        codes = list(ex.map(one, jobs))
    return max(codes) if codes else 0


def run_eval(args):
    mesh_full = load_mesh(args.full)
    gt = bench.load_ground_truth(args.gt)
    with open(args.pi, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    pi = np.full(mesh_full.n_vertices, solver.UNASSIGNED, dtype=np.int64)
    for full_v, part_v in rows:
        pi[int(full_v)] = int(part_v)
    assignment = solver.invert_assignment(pi, len(gt.correspondence))
    errors = bench.princeton_error(assignment, gt, mesh_full)
    thresholds = np.linspace(0.0, args.max_threshold, args.n_thresholds)
    curve = bench.cumulative_curve(errors, thresholds)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "fraction"])
        for t, f in zip(thresholds, curve):
            w.writerow([repr(float(t)), repr(float(f))])
    finite = errors[np.isfinite(errors)]
    mean = float(finite.mean()) if len(finite) else float("nan")
    print(f"eval: {len(finite)}/{len(errors)} assigned, mean error {mean:.5f}")
    return 0


def run_gen(args):
    mesh = load_mesh(args.mesh)
    if args.kind == "cut":
        normal = np.asarray([float(x) for x in args.plane_normal.split(",")])
        if args.keep_fraction is not None:
            point = bench.plane_offset_for_area(mesh, normal,
                                                args.keep_fraction)
        else:
            point = np.asarray([float(x) for x in args.plane_point.split(",")])
        partial, gt = bench.plane_cut(mesh, point, normal)
    else:
        partial, gt = bench.erode_holes(mesh, args.seeds, args.area_budget)
    save_ply(partial, args.out_prefix + "_part.ply")
    bench.save_ground_truth(gt, args.out_prefix + "_gt.csv")
    with open(args.out_prefix + "_manifest.txt", "w") as fh:
        fh.write(f"{args.mesh} {args.out_prefix}_part.ply "
                 f"{args.out_prefix}_gt.csv\n")
    print(f"gen: kept {partial.n_vertices}/{mesh.n_vertices} vertices, "
          f"area fraction {partial.total_area / mesh.total_area:.3f}")
    return 0


def run_perturb(args):
    os.makedirs(args.out, exist_ok=True)
    mesh = load_mesh(args.mesh)
    normal = np.asarray([float(x) for x in args.plane_normal.split(",")])
    point = np.asarray([float(x) for x in args.plane_point.split(",")])
    nrm = normal / np.linalg.norm(normal)
    part_ids = np.flatnonzero((mesh.vertices - point) @ nrm >= 0)
    setup = spectral.perturbation_setup(mesh, part_ids)

    import scipy.linalg as sla
    import scipy.sparse as sp

    pair = laplacian.LaplacianPair(-setup.K_part, sp.diags(setup.mass_part))
    kk = min(args.k, setup.n_part - 1)
    basis = laplacian.eigensolve(pair, kk)

    # Finite-difference check of the eigenvalue derivative formula.
    t = args.fd_step
    S = np.diag(np.concatenate([setup.mass_part, setup.mass_comp]))
    lam0 = sla.eigh(setup.stiffness(0.0).toarray(), S, eigvals_only=True)
    lam1 = sla.eigh(setup.stiffness(t).toarray(), S, eigvals_only=True)
    report = []
    for i in range(1, min(args.n_check + 1, kk)):
        pred = spectral.eigenvalue_derivative(basis, setup.P_part, i)
        pos = int(np.argmin(np.abs(lam0 - basis.eigenvalues[i])))
        fd = (lam1[pos] - lam0[pos]) / t
        denom = max(abs(fd), 1e-300)
        report.append((i, pred, fd, abs(pred - fd) / denom))
    with open(os.path.join(args.out, "eigenvalue_fd.csv"), "w",
              newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "formula", "finite_difference", "rel_error"])
        for row in report:
            w.writerow([row[0]] + [repr(float(x)) for x in row[1:]])

    f = spectral.boundary_interaction(basis)
    with open(os.path.join(args.out, "boundary_interaction.csv"), "w",
              newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["vertex", "f"])
        for i, val in enumerate(f):
            w.writerow([i, repr(float(val))])
    sub, _ = mesh.submesh(part_ids)
    fn = f / f.max() if f.max() > 0 else f
    colors = np.zeros((len(f), 3), dtype=np.uint8)
    colors[:, 0] = (255 * fn).astype(np.uint8)
    colors[:, 2] = (255 * (1 - fn)).astype(np.uint8)
    save_ply(sub, os.path.join(args.out, "boundary_interaction.ply"),
             colors=colors)
    worst = max(r[3] for r in report)
    print(f"perturb: {len(report)} eigenvalue derivatives checked, "
          f"max relative error {worst:.3e}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="pfmatch",
                                description="Partial functional correspondence toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("match", help="match a partial shape to a full model")
    m.add_argument("--part", help="partial mesh (OFF/PLY)")
    m.add_argument("--full", help="full mesh (OFF/PLY)")
    m.add_argument("--pairs", help="batch manifest: part full outdir per line")
    m.add_argument("--out", default="match_out")
    m.add_argument("--config", help="key=value configuration file")
    m.add_argument("--k", type=int, default=100)
    m.add_argument("--radius", type=float, default=0.0,
                   help="descriptor support radius (0 = 7%% of sqrt(area))")
    m.add_argument("--descriptors-part", default="")
    m.add_argument("--descriptors-full", default="")
    m.add_argument("--mu1", type=float, default=1.0)
    m.add_argument("--mu2", type=float, default=1e2)
    m.add_argument("--mu3", type=float, default=1.0)
    m.add_argument("--mu4-5", dest="mu4_5", type=float, default=1e3)
    m.add_argument("--sigma-w", type=float, default=0.03)
    m.add_argument("--sigma-xi", type=float, default=0.5)
    m.add_argument("--max-outer", type=int, default=5)
    m.add_argument("--cg-max-iter", type=int, default=300)
    m.add_argument("--cg-grad-tol", type=float, default=1e-6)
    m.add_argument("--jobs", type=int, default=1)

    e = sub.add_parser("eval", help="evaluate a match against ground truth")
    e.add_argument("--pi", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--full", required=True)
    e.add_argument("--out", default="curve.csv")
    e.add_argument("--max-threshold", type=float, default=0.25)
    e.add_argument("--n-thresholds", type=int, default=101)

    g = sub.add_parser("gen", help="generate a synthetic partial shape")
    g.add_argument("kind", choices=["cut", "holes"])
    g.add_argument("--mesh", required=True)
    g.add_argument("--plane-point", default="0,0,0")
    g.add_argument("--plane-normal", default="0,0,1")
    g.add_argument("--keep-fraction", type=float, default=None)
    g.add_argument("--seeds", type=int, default=5)
    g.add_argument("--area-budget", type=float, default=0.7)
    g.add_argument("--out-prefix", default="partial")

    r = sub.add_parser("perturb", help="perturbation-theory report for a cut")
    r.add_argument("--mesh", required=True)
    r.add_argument("--plane-point", default="0,0,0")
    r.add_argument("--plane-normal", default="0,0,1")
    r.add_argument("--k", type=int, default=50)
    r.add_argument("--n-check", type=int, default=10)
    r.add_argument("--fd-step", type=float, default=1e-4)
    r.add_argument("--out", default="perturb_out")
    p.subcommands = {"match": m, "eval": e, "gen": g, "perturb": r}
    return p


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args._argv = argv
        args = _apply_config(args, parser.subcommands[args.command])
        if args.command == "match":
            if args.pairs:
                return run_match_batch(args)
            if not args.part or not args.full:
                raise UsageError("match requires --part and --full (or --pairs)")
            return run_match(args)
        if args.command == "eval":
            return run_eval(args)
        if args.command == "gen":
            return run_gen(args)
        if args.command == "perturb":
            return run_perturb(args)
        raise UsageError(f"unknown command {args.command}")
    except (UsageError, MeshError, FileNotFoundError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (EigensolveError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
