"""Command line entry point: ``perfhom <subcommand> --config run.json --out dir``."""
import argparse
import json
import logging
import os
import sys

from .harness import ALL_STAGES, RunConfig, run_sweep

SUBCOMMAND_STAGES = {
    "rates": ("rates",),
    "spectra": ("rates", "spectra", "resolvent"),
    "closeness": ("rates", "closeness"),
    "full": ALL_STAGES,
}


def _parse_stages(text):
    stages = tuple(s.strip() for s in text.split(",") if s.strip())
    unknown = set(stages) - set(ALL_STAGES)
    if unknown:
        raise argparse.ArgumentTypeError(f"unknown stages: {', '.join(sorted(unknown))}")
    return stages


def _capacity_oracle(args):
    from .capacity import Ball, UnionOfBalls, cap_ball, cap_numeric

    cfg = {}
    if args.config:
        with open(args.config) as fh:
            cfg = json.load(fh)
    balls = cfg.get("balls", [{"center": [0.0, 0.0, 0.0], "r": 1.0}])
    shapes = [Ball(tuple(b["center"]), float(b["r"])) for b in balls]
    K = shapes[0] if len(shapes) == 1 else UnionOfBalls(tuple(shapes))
    lo, hi = K.bbox()
    R_out = float(cfg.get("R_out", 3.0 * K.enclosing_radius(0.5 * (lo + hi))))
    est = cap_numeric(K, R_out=R_out, h=float(cfg.get("h", 0.1)))
    out = {"capacity": est.value, "error": est.error, "unknowns": est.unknowns}
    if len(shapes) == 1:
        out["closed_form"] = cap_ball(shapes[0].r, 3)
    text = json.dumps(out, indent=2)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "capacity.json"), "w") as fh:
            fh.write(text + "\n")
    print(text)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="perfhom", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("rates", "spectra", "closeness", "full", "capacity-oracle"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=(name != "capacity-oracle"), help="JSON run configuration")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        if name != "capacity-oracle":
            p.add_argument("--stages", type=_parse_stages, help="comma-separated subset of " + ",".join(ALL_STAGES))
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "capacity-oracle":
        return _capacity_oracle(args)
    with open(args.config) as fh:
        data = json.load(fh)
    data["stages"] = list(args.stages or SUBCOMMAND_STAGES[args.command])
    if args.seed is not None:
        data["seed"] = args.seed
    if args.out:
        data["out"] = args.out
    cfg = RunConfig.from_dict(data)
    report = run_sweep(cfg)
    for row in report.rows:
        cells = [f"eps={row['eps']:.6g}", f"D={row['D']:.4g}", f"pred={row['predicted']:.4g}"]
        for name in ("spectral_metric", "resolvent_norm", "c1a", "c4a", "c5"):
            if row.get(name) is not None:
                cells.append(f"{name}={row[name]:.4g}")
        if row["status"] != "ok":
            cells.append(f"[{row['status']}]")
        print("  ".join(cells))
    summary = report.summary()
    print(json.dumps({"fitted_C": summary["fitted_C"], "invariants": summary["invariants"]}, indent=2))
    return 0 if summary["passed"] else 1


if __name__ == "__main__":
    sys.exit(main())
