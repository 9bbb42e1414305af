"""Command-line front end.

Exit codes: 0 success, 1 at least one row-level fit error, 2 configuration error.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time

import numpy as np

from .core import fit_closed_form, prepare
from .dataset import DatasetError
from .harness import (CEF_METHODS, ConfigError, ExperimentConfig, _metrics_row, default_out_path,
                      emit_csv, load_config, run_cef_vs_sr, run_loss_vs_k, run_tev_vs_k)
from .iterate import InitScheme, derive_seed, fit_iterative, stall_check
from .linalg import sym_eig
from .regularizers import PENALTY_KINDS, Penalty

log = logging.getLogger("regmva")

EXPERIMENTS = {
    "loss-vs-k": run_loss_vs_k,
    "tev-vs-k": run_tev_vs_k,
    "cef-vs-sr": run_cef_vs_sr,
}


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("data and sweep")
    g.add_argument("--config", help="key=value file; command-line flags override it")
    g.add_argument("--data", help="CSV file (default: bundled segment.csv)")
    g.add_argument("--target", help="target column (default: category)")
    g.add_argument("--standardize", dest="standardize", action="store_const", const=True,
                   default=None, help="scale features to unit variance after centering "
                   "(default: on for cef-vs-sr only)")
    g.add_argument("--no-standardize", dest="standardize", action="store_const", const=False)
    g.add_argument("--keep-collinear", action="store_const", const=True, default=None,
                   help="keep features that are linear combinations of earlier ones")
    g.add_argument("--variant", help="pca, cca, opls or a comma list (default: all three)")
    g.add_argument("--k", help="N or A..B (inclusive)")
    g.add_argument("--seeds", type=int, help="random initializations per cell (default 50)")
    g.add_argument("--root-seed", type=int, help="root of the per-run seed derivation")
    g.add_argument("--max-iter", type=int, help="outer iteration cap (default 500)")
    g.add_argument("--tol", type=float, help="relative change in U to stop at (default 1e-6)")
    g.add_argument("--jobs", type=int, help="worker processes (default 1)")
    g.add_argument("--out", help="output directory (default: results)")
    g.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="regmva", description="Regularized MVA (PCA / CCA / OPLS) experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit one model and print its diagnostics")
    _common(p)
    p.add_argument("--method", default="eigen", choices=["closed-form", "procrustes", "eigen"])
    p.add_argument("--penalty", default="none", choices=PENALTY_KINDS)
    p.add_argument("--gamma", type=float, default=0.0)
    p.add_argument("--init", default="random", choices=["random", "orthogonal", "ideal"])
    p.add_argument("--save", help="write U to this CSV file")

    for name, doc in (("loss-vs-k", "objective vs number of features"),
                      ("tev-vs-k", "total explained variance vs number of features")):
        p = sub.add_parser(name, help=doc)
        _common(p)
        p.add_argument("--strategies", help="comma list of procrustes, eigen")
        p.add_argument("--gnuplot", action="store_const", const=True, default=None,
                       help="also write whitespace-delimited aggregates (.dat)")

    p = sub.add_parser("cef-vs-sr", help="feature correlation vs sparsity rate")
    _common(p)
    p.add_argument("--penalty", choices=["l1", "l21"])
    p.add_argument("--sr-grid", help="comma list of target sparsity rates in [0, 0.8]")
    p.add_argument("--gamma", help="fixed gamma instead of SR targeting")
    p.add_argument("--cef-methods", help="comma list of " + ", ".join(CEF_METHODS))
    p.add_argument("--gnuplot", action="store_const", const=True, default=None)

    p = sub.add_parser("stall-check", help="one Procrustes step from orthogonal V0")
    _common(p)
    p.add_argument("--trials", type=int, default=20, help="random rotations besides V0 = I")
    p.add_argument("--threshold", type=float, default=1e-8)
    p.add_argument("--raw", action="store_true",
                   help="report the raw distance, including null-space components of M")
    return parser


_CONFIG_KEYS = ("data", "target", "standardize", "keep_collinear", "variant", "k", "seeds",
                "root_seed", "max_iter", "tol", "jobs", "out", "strategies", "gnuplot",
                "penalty", "sr_grid", "gamma", "cef_methods")


def config_from_args(args) -> ExperimentConfig:
    overrides = {key: getattr(args, key) for key in _CONFIG_KEYS if hasattr(args, key)}
    if args.command in ("fit", "stall-check"):
        # these use penalty/gamma differently; keep them out of the sweep config
        overrides.pop("penalty", None)
        overrides.pop("gamma", None)
    return load_config(args.config, overrides)


def _run_experiment(args, config: ExperimentConfig) -> int:
    t0 = time.perf_counter()
    report = EXPERIMENTS[args.command](config)
    paths = emit_csv(report, default_out_path(config, args.command), gnuplot=config.gnuplot)
    print(f"{args.command}: {len(report.rows)} rows, {report.errors} errors, "
          f"{time.perf_counter() - t0:.1f}s")
    for kind, path in paths.items():
        print(f"  {kind}: {path}")
    return 1 if report.errors else 0


def _run_fit(args, config: ExperimentConfig) -> int:
    d = config.load()
    variant = config.variants[0]
    prob = prepare(d, variant)
    k = config.k[0] if config.k is not None else 1
    if not 1 <= k <= prob.max_k:
        raise ConfigError(f"k={k} outside [1, {prob.max_k}]")
    seed = derive_seed(config.root_seed, 0)
    if args.method == "closed-form":
        if args.penalty not in ("none", "ridge"):
            raise ConfigError("closed form supports only none or ridge penalties")
        model = fit_closed_form(prob, variant, k, args.gamma)
    else:
        init = InitScheme.random(seed) if args.init == "random" else InitScheme(args.init)
        model = fit_iterative(prob, variant, k, Penalty(args.penalty, args.gamma), args.method,
                              init, config.max_iter, config.tol)
    row = _metrics_row(prob, model, args.method, seed, None,
                       "trace" if variant == "cca" else "objective")
    print(f"variant={variant} k={k} method={args.method} penalty={args.penalty} "
          f"gamma={args.gamma:g}")
    print(f"loss={row.loss:.10g} tev={row.tev:.10g} cef={row.cef:.6g} sr={row.sr:.4f} "
          f"iterations={row.iterations} converged={row.converged}")
    if model.flags:
        print("flags=" + ",".join(sorted(model.flags)))
    if args.save:
        np.savetxt(args.save, model.U, delimiter=",", fmt="%.17g")
    return 0


def _run_stall(args, config: ExperimentConfig) -> int:
    d = config.load()
    rng = np.random.default_rng(derive_seed(config.root_seed, 0))
    worst = 0.0
    for variant in config.variants:
        m = prepare(d, variant).m
        trials = [("identity", np.eye(m))]
        for i in range(args.trials):
            q, r = np.linalg.qr(rng.standard_normal((m, m)))
            trials.append((f"rotation-{i}", q * np.sign(np.diag(r))))
        trials.append(("eigvec(Cyy)", sym_eig(prepare(d, variant).Cyy).eigenvectors))
        dist = [stall_check(d, variant, V0, identifiable_only=not args.raw) for _, V0 in trials]
        worst = max(worst, max(dist))
        print(f"{variant}: max {max(dist):.3e} over {len(dist)} starts "
              f"(identity {dist[0]:.3e})")
    ok = worst <= args.threshold
    print(f"stall {'holds' if ok else 'violated'}: max distance {worst:.3e} "
          f"(threshold {args.threshold:g})")
    return 0 if ok else 1


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        config = config_from_args(args)
        if args.command in EXPERIMENTS:
            return _run_experiment(args, config)
        if args.command == "fit":
            return _run_fit(args, config)
        return _run_stall(args, config)
    except (ConfigError, DatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
