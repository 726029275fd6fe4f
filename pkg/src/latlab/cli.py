"""Command line entry point: ``latlab <subcommand> --seed N [options]``."""

from __future__ import annotations

import argparse
import io
import json
import math
import sys

import numpy as np

from . import experiments as ex
from .dani_transform import PsiFunction, dani_forward
from .errors import LatlabError
from .root_geometry import dl_exponent, rho_coefficient, weight_norm_sq
from .siegel_measure import LatticeSampler, siegel_constant, siegel_mc, siegel_pair_mc, tail_distribution

SCHEMAS = {
    "bc-count": "replica,N,S_N,E_N,ratio,residual,provenance",
    "bc-variance": "M,N,sum_mu,variance,ratio,variance_shuffled,ratio_shuffled,provenance",
    "loglaw": "replica,slope,final_max,provenance",
    "khinchin": "Qmax,mean_count,median_count,predicted,provenance",
    "skriganov": "replica,q,count_R<R> for each ladder radius,provenance",
    "mixing-probe": "t,correlation,provenance",
    "roots": "i,k_i,weight_norm_sq,ratio,k_closed_form",
    "siegel": "dim,radius,samples,mean,sem,prediction,provenance",
    "tail": "z,phi_hat,ci,upper_bound,lower_bound,provenance",
    "dani": "t,r,lambda,L",
}


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--seed", type=int, required=True, help="master seed (unsigned 64-bit)")
    g.add_argument("--out", default=None, help="output path (default: stdout)")
    g.add_argument("--format", choices=["csv", "json"], default="csv")
    g.add_argument("--threads", type=int, default=None)
    g.add_argument("--config", default=None, help="JSON file with ExperimentConfig fields")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latlab", description="Lattice dynamics laboratory.")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    common = _common()

    def add(name, help_text):
        return sub.add_parser(name, parents=[common], help=help_text,
                              epilog=f"CSV columns: {SCHEMAS[name]}")

    p = add("bc-count", "hit counts along orbits against expected counts")
    p.add_argument("--rate", help='target sequence: "zero", "log:c=0.5", "const:c=0.3"')
    p.add_argument("--horizon", type=int)
    p.add_argument("--samples", type=int, help="number of replicas")
    p.add_argument("--flow", help='"m:n" shorthand or comma separated exponents')

    p = add("bc-variance", "variance of window sums of hit indicators")
    p.add_argument("--rate")
    p.add_argument("--samples", type=int)
    p.add_argument("--windows", help='e.g. "1-100,100-1000"')
    p.add_argument("--flow")

    p = add("loglaw", "growth of running maxima of Delta")
    p.add_argument("--horizon", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--flow")

    p = add("khinchin", "witness counts for random scalars")
    p.add_argument("--psi", help='e.g. "power_log:c=1,a=1,q=0,x0=1"')
    p.add_argument("--qmax", type=int, dest="horizon")
    p.add_argument("--samples", type=int)

    p = add("skriganov", "multiplicative witness counts along a radius ladder")
    p.add_argument("--dim", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--qs", help='comma separated exponents, e.g. "0.5,2"')
    p.add_argument("--ladder", help='comma separated radii, e.g. "100,1000,10000"')
    p.add_argument("--control", action="store_true", help="use the standard lattice")

    p = add("mixing-probe", "correlation decay of two bump observables (qualitative)")
    p.add_argument("--samples", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--flow")

    p = add("roots", "type A weight norms and exponents")
    p.add_argument("what", nargs="?", default="table", choices=["table"])
    p.add_argument("--n", type=int, default=3)

    p = add("siegel", "mean number of primitive vectors (or pairs) in a ball")
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--radius", type=float, default=0.5)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--pairs", action="store_true")

    p = add("tail", "empirical tail of Delta with analytic envelopes")
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--zgrid", default="0:3:0.25", help='"start:stop:step" or comma list')
    p.add_argument("--samples", type=int, default=100_000)

    p = add("dani", "rate function table for an approximation function")
    p.add_argument("--psi", default="power_log:c=1,a=1,q=2,x0=2")
    p.add_argument("--m", type=int, default=1)
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--t-max", type=float, default=20.0)
    p.add_argument("--points", type=int, default=101)
    return parser


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _zgrid(text: str) -> np.ndarray:
    if ":" in text:
        a, b, h = (float(x) for x in text.split(":"))
        return np.round(np.arange(a, b + h / 2, h), 12)
    return np.array(_floats(text))


def _experiment_config(args, file_cfg: dict) -> ex.ExperimentConfig:
    data = dict(file_cfg)
    data["subcommand"] = args.subcommand
    data["seed"] = args.seed
    for key in ("rate", "horizon", "samples", "flow", "psi", "dim"):
        val = getattr(args, key, None)
        if val is not None:
            data[key] = val
    if args.threads is not None:
        data["threads"] = args.threads
    if getattr(args, "windows", None):
        data["windows"] = [tuple(int(x) for x in w.split("-")) for w in args.windows.split(",")]
    if getattr(args, "qs", None):
        data["qs"] = _floats(args.qs)
    if getattr(args, "ladder", None):
        data["ladder"] = _floats(args.ladder)
    if getattr(args, "control", False):
        data["control"] = True
    if getattr(args, "steps", None):
        data["steps"] = args.steps
    if args.subcommand == "skriganov":
        data.setdefault("samples", 100)
    if args.subcommand == "mixing-probe":
        data.setdefault("samples", 100_000)
    if args.subcommand == "khinchin":
        data.setdefault("samples", 200)
    if args.subcommand == "loglaw":
        data.setdefault("horizon", 100_000)
    if args.subcommand == "bc-variance":
        data.setdefault("samples", 2000)
    return ex.ExperimentConfig.from_json(data)


def _roots_report(n: int) -> ex.Report:
    k = dl_exponent(n)
    rows = []
    for i in range(1, n):
        w = weight_norm_sq(n, i)
        rows.append({"i": i, "k_i": rho_coefficient(n, i), "weight_norm_sq": w,
                     "ratio": rho_coefficient(n, i) / math.sqrt(w), "k_closed_form": k})
    return ex.Report("roots", "exact", rows, {"n": n, "k": k})


def _siegel_report(args) -> ex.Report:
    s = LatticeSampler(args.dim, "auto", args.seed)
    threads = args.threads or 1
    if args.pairs:
        res = siegel_pair_mc(s, args.radius, args.samples, threads)
        pred = (2 * args.radius) ** (2 * args.dim) * siegel_constant(args.dim, 2) if args.dim >= 3 else float("nan")
    else:
        res = siegel_mc(s, args.radius, args.samples, threads)
        pred = (2 * args.radius) ** args.dim * siegel_constant(args.dim)
    row = {"dim": args.dim, "radius": args.radius, "samples": args.samples,
           "mean": res.mean, "sem": res.sem, "prediction": pred}
    return ex.Report("siegel", s.provenance, [row], {"norm": "sup", **row})


def _tail_report(args) -> ex.Report:
    s = LatticeSampler(args.dim, "auto", args.seed)
    est = tail_distribution(s, _zgrid(args.zgrid), args.samples, args.threads or 1)
    rows = [{"z": z, "phi_hat": p, "ci": c, "upper_bound": u, "lower_bound": lo}
            for z, p, c, u, lo in zip(est.z, est.phi_hat, est.ci, est.upper_bound, est.lower_bound)]
    return ex.Report("tail", est.provenance, rows, {"norm": "sup", "n": est.n, "dim": est.dim})


def _dani_report(args) -> ex.Report:
    psi = PsiFunction.parse(args.psi)
    r = dani_forward(psi, args.m, args.n)
    ts = np.linspace(r.t0, args.t_max, args.points)
    rows = [{"t": t, "r": rv, "lambda": lam, "L": L} for t, rv, lam, L in r.table(ts)]
    return ex.Report("dani", "exact", rows, {"t0": r.t0, "m": args.m, "n": args.n})


def run(argv=None) -> ex.Report:
    args = build_parser().parse_args(argv)
    file_cfg = {}
    if args.config:
        with open(args.config) as fh:
            file_cfg = json.load(fh)
    if args.subcommand in ex.EXPERIMENTS:
        return ex.EXPERIMENTS[args.subcommand](_experiment_config(args, file_cfg))
    if args.subcommand == "roots":
        return _roots_report(args.n)
    if args.subcommand == "siegel":
        return _siegel_report(args)
    if args.subcommand == "tail":
        return _tail_report(args)
    return _dani_report(args)


def main(argv=None) -> int:
    parser_args = build_parser().parse_args(argv)
    try:
        report = run(argv)
    except LatlabError as exc:
        print(f"latlab: error: {exc}", file=sys.stderr)
        return 2
    buf = io.StringIO()
    if parser_args.format == "json":
        buf.write(report.to_json() + "\n")
    else:
        report.to_csv(buf)
    if parser_args.out:
        with open(parser_args.out, "w", newline="") as fh:
            fh.write(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return 0


if __name__ == "__main__":
    sys.exit(main())
