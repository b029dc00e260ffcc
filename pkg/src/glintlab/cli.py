"""Command line entry point: ``glintlab bake | render | experiment``."""

from __future__ import annotations

import argparse
import logging
import sys
import time

import numpy as np

from . import experiments, imageio, ltc, render
from .scene import SceneError, load_scene, scene_from_dict, default_scene_dict

log = logging.getLogger("glintlab")


def _floats(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _load_table(path, kind=None):
    if path is None:
        return ltc.load_default_table(kind or "ggx")
    return ltc.read_table(path)


def _scene(args):
    if args.scene:
        scene = load_scene(args.scene)
    else:
        doc = default_scene_dict(light_size=args.light_size, width=args.width, height=args.height)
        scene = scene_from_dict(doc)
    return scene.with_render(spp=args.spp) if args.spp else scene


def _table_for(scene, args):
    if scene.render.mode in ("smooth_mc", "oracle") and not args.table:
        return None
    return _load_table(args.table, scene.surface.model.kind)


def cmd_bake(args):
    def progress(done, total):
        log.info("row %d / %d", done, total)

    t0 = time.perf_counter()
    table = ltc.bake_table(args.model, args.res, progress=progress if args.verbose else None)
    ltc.write_table(table, args.out)
    if args.log:
        with open(args.log, "w", encoding="utf-8") as fh:
            fh.write("\n".join(table.bake_log) + "\n")
    print(f"wrote {args.out} ({args.res}x{args.res}, {len(table.flagged)} flagged fits, "
          f"{time.perf_counter() - t0:.1f} s)")


def cmd_render(args):
    scene = load_scene(args.scene)
    if args.mode:
        scene = scene.with_render(mode=args.mode)
    if args.R is not None:
        scene = scene.with_render(R=args.R)
    if args.spp:
        scene = scene.with_render(spp=args.spp)
    table = _table_for(scene, args)
    t0 = time.perf_counter()
    img = render.render(scene, table, seed=args.seed, threads=args.threads)
    imageio.write_pfm(img.astype(np.float32), args.out)
    if args.png_out:
        imageio.write_ppm(img, args.png_out, scene.render.exposure, scene.render.tonemap)
    print(f"rendered {img.shape[1]}x{img.shape[0]} ({scene.render.mode}) in {time.perf_counter() - t0:.2f} s")


def cmd_experiment(args):
    name = args.experiment
    if name == "match-r":
        rows = experiments.experiment_match_r(args.gammas, args.roughness, args.model)
        experiments.write_csv(args.csv, experiments.MATCH_R_HEADER, rows)
        for r in rows:
            print(f"gamma={r[0]:g} deg  sqrt(alpha)={r[1]:g}  R={r[2]:.4g}  p={r[3]:.4g}{'  (clipped)' if r[4] else ''}")
        return
    scene = _scene(args)
    table = _load_table(args.table, scene.surface.model.kind)
    if name == "convergence":
        res = experiments.experiment_convergence(scene, table, args.levels, seed=args.seed, threads=args.threads)
        experiments.write_csv(args.csv, res.header, res.rows)
        if args.out:
            imageio.write_pfm(res.strip.astype(np.float32), args.out)
        for r in res.rows:
            print(f"level {r[0]}: density={r[1]:.3g} median N_P p={r[3]:.3g} rel rms={r[4]:.4g}")
    elif name == "subdivision":
        seeds = list(range(args.seeds))
        res = experiments.experiment_subdivision(scene, table, args.splits, seeds, args.variant, args.threads)
        experiments.write_csv(args.csv, res.header, res.rows(seeds))
        if args.out:
            pair = np.concatenate([res.whole[0], res.subdivided[0]], axis=1)
            imageio.write_pfm(pair.astype(np.float32), args.out)
        z = res.mean_diff / res.se_diff if res.se_diff > 0 else 0.0
        print(f"count sums exact: {res.count_sum_exact}; mean diff {res.mean_diff:.3g} (z={z:.2f}); "
              f"relative abs diff {res.rel_abs_diff:.4g}")
    elif name == "ablation":
        grid, images = experiments.experiment_ablation(scene, table, seed=args.seed, threads=args.threads)
        experiments.write_csv(args.csv, experiments.ABLATION_HEADER, experiments.ablation_rows(images))
        if args.out:
            imageio.write_pfm(grid.astype(np.float32), args.out)
        for r in experiments.ablation_rows(images):
            print(f"radiance={r[0]:>3} probability={r[1]:>7}: mean={r[2]:.4g} rel rms vs all-MC={r[3]:.4g}")


def build_parser():
    p = argparse.ArgumentParser(prog="glintlab", description="Glint rendering under area lights.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bake", help="fit and write an LTC table")
    b.add_argument("--model", choices=("ggx", "beckmann"), default="ggx")
    b.add_argument("--res", type=int, default=64)
    b.add_argument("--out", required=True)
    b.add_argument("--log", help="write the bake log (flagged cells) here")
    b.set_defaults(func=cmd_bake)

    r = sub.add_parser("render", help="render a scene file")
    r.add_argument("--scene", required=True)
    r.add_argument("--table", help="GLTB table (defaults to the bundled one)")
    r.add_argument("--mode", choices=("smooth_ltc", "smooth_mc", "glint", "glint_baseline", "oracle"))
    r.add_argument("--R", type=float, help="heuristic R for glint_baseline")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--spp", type=int, help="Monte Carlo samples per pixel and light")
    r.add_argument("--out", required=True, help="PFM output")
    r.add_argument("--png-out", help="tonemapped 8-bit PPM output")
    r.add_argument("--threads", type=int)
    r.set_defaults(func=cmd_render)

    e = sub.add_parser("experiment", help="run an experiment")
    e.add_argument("experiment", choices=("convergence", "subdivision", "match-r", "ablation"))
    e.add_argument("--scene", help="scene file (defaults to a plane under a quad light)")
    e.add_argument("--table")
    e.add_argument("--width", type=int, default=64)
    e.add_argument("--height", type=int, default=64)
    e.add_argument("--light-size", type=float, default=5.0)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--spp", type=int, help="Monte Carlo samples per pixel and light")
    e.add_argument("--threads", type=int)
    e.add_argument("--csv", default="experiment.csv")
    e.add_argument("--out", help="PFM image output")
    e.add_argument("--levels", type=int, default=5, help="convergence: number of strips")
    e.add_argument("--splits", type=int, default=256, help="subdivision: number of patches (square)")
    e.add_argument("--variant", choices=("ltc", "mc"), default="ltc", help="subdivision: probability source")
    e.add_argument("--seeds", type=int, default=100, help="subdivision: number of count seeds")
    e.add_argument("--gammas", type=_floats, default=[0.26, 5.0], help="match-r: cap half-angles in degrees")
    e.add_argument("--roughness", type=_floats, default=[0.1, 0.5, 0.9], help="match-r: sqrt(alpha) values")
    e.add_argument("--model", choices=("ggx", "beckmann"), default="ggx")
    e.set_defaults(func=cmd_experiment)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except (SceneError, OSError, ValueError) as e:
        print(f"glintlab: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
