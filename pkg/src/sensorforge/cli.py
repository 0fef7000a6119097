"""Command-line entry point: ``sensorforge {generate,simulate,eval-placement}``.

Exit codes: 0 success, 2 config/input error, 3 degenerate anchor geometry.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from ._accel import configure_threads
from .io import (FormatError, dump_json, load_scene, read_anchors, read_rules, write_bitmap, write_matrix,
                 write_placement)
from .localization import GridSpec, degenerate_geometry, localization_error_map
from .procgen import PlacementError, RulesError, generate, to_bitmap
from .rf import RfConfig
from .runner import ConfigError, RunConfig, run

EXIT_OK, EXIT_INPUT, EXIT_DEGENERATE = 0, 2, 3

log = logging.getLogger("sensorforge")


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors already; keep messages on stderr
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sensorforge", description="Headless LiDAR / pulse-echo / RF sensor simulation.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="procedurally generate a placement list")
    g.add_argument("--rules", required=True, help="generation rules file (YAML or JSON)")
    g.add_argument("--seed", required=True, type=_u64, help="64-bit master seed")
    g.add_argument("--out", required=True, help="placement list output file (JSON)")
    g.add_argument("--bitmap", help="also write the grid bitmap (text matrix with 'W H' header)")

    s = sub.add_parser("simulate", help="run the frame loop described by a run config")
    s.add_argument("--config", required=True, help="run config file (YAML or JSON)")
    s.add_argument("--out", help="output directory (defaults to the config's 'output' key)")

    e = sub.add_parser("eval-placement", help="localization-error map for an anchor placement")
    e.add_argument("--scene", required=True, help="scene file (YAML or JSON)")
    e.add_argument("--anchors", required=True, help="anchors CSV (anchor_id,x,y,z)")
    e.add_argument("--grid", required=True, help="grid spec x0=..,y0=..,cell=..,nx=..,ny=..[,z=..]")
    e.add_argument("--out", required=True, help="error matrix output; summary goes to <out>.summary.json")
    e.add_argument("--wavelength", type=float, default=0.0462, help="carrier wavelength in m (default 0.0462)")
    e.add_argument("--n-rays", type=int, default=4096, help="rays launched per tag position (default 4096)")
    e.add_argument("--max-interactions", type=int, default=3, help="reflection/transmission depth (default 3)")
    e.add_argument("--attenuation-floor", type=float, default=120.0, help="path-loss floor in dB (default 120)")
    e.add_argument("--full-3d", action="store_true", help="solve x, y, z instead of fixing z at the grid height")
    p.epilog = "Environment: SENSORFORGE_THREADS caps the worker count (0 = auto)."
    return p


def cmd_generate(args) -> int:
    rules = read_rules(args.rules)
    plist = generate(rules, args.seed)
    write_placement(args.out, plist)
    if args.bitmap:
        write_bitmap(args.bitmap, to_bitmap(plist, rules))
    log.info("wrote %d entries to %s", len(plist), args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = RunConfig.load(args.config)
    out = args.out or cfg.output
    if out is None:
        raise ConfigError("output", "no --out given and the config has no 'output' key")
    summary = run(cfg, out)
    log.info("%d frames, %.3f s simulated", summary.frames, summary.sim_time)
    return EXIT_OK


def cmd_eval(args) -> int:
    scene, _ = load_scene(args.scene)
    anchors = read_anchors(args.anchors)
    grid = GridSpec.parse(args.grid)
    planar = not args.full_3d
    need = 3 if planar else 4
    pos = np.array([a.position for a in anchors]).reshape(-1, 3)
    if len(anchors) < need or degenerate_geometry(pos[:, :2] if planar else pos, 2 if planar else 3):
        print(f"sensorforge: degenerate anchor set ({len(anchors)} anchors; need {need} in general position)",
              file=sys.stderr)
        return EXIT_DEGENERATE
    cfg = RfConfig(wavelength=args.wavelength, n_rays=args.n_rays, max_interactions=args.max_interactions,
                   attenuation_floor=args.attenuation_floor)
    emap = localization_error_map(scene, anchors, grid, cfg, planar=planar)
    write_matrix(args.out, emap.values)
    summary = emap.summary()
    dump_json(summary, f"{args.out}.summary.json")
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    handlers = {"generate": cmd_generate, "simulate": cmd_simulate, "eval-placement": cmd_eval}
    try:
        configure_threads()
        return handlers[args.command](args)
    except (ConfigError, FormatError, RulesError, PlacementError, ValueError, OSError, KeyError) as exc:
        print(f"sensorforge: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
