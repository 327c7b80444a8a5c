"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import sys

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _echo_config(args) -> None:
    items = {k: v for k, v in vars(args).items() if k != "func"}
    print("# config " + " ".join(f"{k}={v}" for k, v in sorted(items.items())), file=sys.stderr)


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args) -> int:
    from .datagen import GenConfig, generate, write_dataset
    cfg = GenConfig(n=args.n, m=args.grid, L=args.channels, tau=args.tau, seed=args.seed,
                    n_ellipses=args.ellipses)
    recs = generate(cfg, args.threads)
    write_dataset(args.out, recs, m=cfg.m, L=cfg.L, tau=cfg.tau, seed=cfg.seed, n_ellipses=cfg.n_ellipses)
    print(f"wrote {len(recs)} samples to {args.out}")
    return EXIT_OK


def write_pgm(path, values: np.ndarray) -> tuple:
    """Binary P5 image with linear min-max scaling to 0..255; returns (min, max).

    Row 0 of the image is the top of the domain (y = 1).
    """
    lo, hi = float(values.min()), float(values.max())
    span = hi - lo if hi > lo else 1.0
    img = np.rint((values - lo) / span * 255.0).astype(np.uint8)[::-1]
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())
    return lo, hi


def cmd_dsm(args) -> int:
    from .datagen import read_dataset
    from .dsm import dsm_from_data
    from .elliptic import SigmaField, ntd_apply
    from .mesh import BoundarySignal, make_grid
    hdr, recs = read_dataset(args.input)
    if not 0 <= args.index < len(recs):
        raise UsageError(f"record index {args.index} out of range [0, {len(recs)})")
    rec = recs[args.index]
    grid = make_grid(hdr.m)
    g = BoundarySignal(grid, rec.g[args.current].astype(float))
    f = BoundarySignal(grid, rec.f[args.current].astype(float))
    diff = (f - ntd_apply(SigmaField.constant(grid), g)).zero_mean()
    idx, _ = dsm_from_data(diff, args.s)
    A = idx.field.as_array()
    lo, hi = write_pgm(f"{args.out}.pgm", A)
    with open(f"{args.out}.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "j", "x", "y", "index", "mask"])
        for k in range(grid.size):
            i, j = divmod(k, grid.m)
            w.writerow([i, j, repr(grid.x[k]), repr(grid.y[k]), repr(idx.values[k]), int(rec.mask.ravel()[k])])
    with open(f"{args.out}.scale.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["min", "max", "levels"])
        w.writerow([repr(lo), repr(hi), 255])
    am = int(np.argmax(idx.values))
    inside = bool(rec.mask.ravel()[am] > 0.5)
    print(f"argmax node {am} at ({grid.x[am]:.4f}, {grid.y[am]:.4f}); inside inclusion: {inside}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .datagen import load_arrays, read_dataset
    from .train_eval import TrainConfig, save_checkpoint, train
    from .uit import UitConfig
    hdr, recs = read_dataset(args.data)
    X, Y = load_arrays(recs)
    ucfg = UitConfig(m=hdr.m, input_channels=3 * hdr.L, base_channels=args.base_channels,
                     levels=args.levels, softmax=args.softmax)
    tcfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, seed=args.seed, loss=args.loss,
                       lr_max=args.lr_max, model=args.model)
    res = train(X, Y, tcfg, ucfg, history_path=args.history, log=print if args.verbose else None)
    save_checkpoint(args.out, res)
    print(f"best epoch {res.best_epoch}; checkpoint {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .datagen import load_arrays, read_dataset
    from .train_eval import evaluate, load_checkpoint, write_metrics
    model, cfg, params = load_checkpoint(args.checkpoint)
    sets = []
    for path in args.data:
        hdr, recs = read_dataset(path)
        X, Y = load_arrays(recs)
        sets.append((hdr.tau, X, Y))
    rows = evaluate(model, params, cfg, sets)
    write_metrics(args.out, rows)
    for r in rows:
        print(f"{r['model']} tau={r['tau']:.3g} rel_l2={r['rel_l2']:.4f} ce={r['ce']:.4f} dice={r['dice']:.4f}")
    return EXIT_OK


def cmd_bootstrap(args) -> int:
    from .attention import bootstrap_error
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["a", "N", "error"])
    for N in range(args.n_min, args.n_max + 1, args.step):
        w.writerow([args.a, N, repr(bootstrap_error(args.a, N, args.quadrature))])
    return EXIT_OK


def cmd_disk_oracle(args) -> int:
    from .analytic_disk import DiskParams, disk_eigenvalue, recover_rho_mu
    p = DiskParams(args.rho, args.sigma1)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["l", "lambda"])
    lams = [disk_eigenvalue(p, l) for l in range(1, args.L + 1)]
    for l, lam in enumerate(lams, 1):
        w.writerow([l, f"{lam:.10f}"])
    if len(lams) >= 2:
        r = recover_rho_mu(lams[0], lams[1])
        w.writerow(["rho", "mu", "rho_recovered", "mu_recovered"])
        w.writerow([repr(p.rho), repr(p.mu), repr(r.rho), repr(r.mu)])
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .selfcheck import op_checks, run_all
    results = op_checks(np.random.default_rng(args.seed)) if args.ops_only else run_all(args.seed)
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'} {r.name} rel_err={r.error:.3e} tol={r.tol:.0e}")
    bad = [r for r in results if not r.ok]
    print(f"{len(results) - len(bad)}/{len(results)} checks passed")
    return EXIT_OK if not bad else EXIT_RUNTIME


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="eitdsm", description="Direct sampling and integral-attention EIT tools.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("gen-data", help="generate an EITD dataset")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--grid", type=int, default=65)
    s.add_argument("--ellipses", type=int, default=4)
    s.add_argument("--channels", type=int, default=1, help="number of boundary currents L")
    s.add_argument("--tau", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--threads", type=int, default=None, help="defaults to EIT_THREADS or 1")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("dsm", help="classical direct sampling index for one record")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--index", type=int, default=0)
    s.add_argument("--current", type=int, default=0)
    s.add_argument("--s", type=float, default=1.5, help="boundary seminorm order")
    s.add_argument("--out", required=True, help="output prefix")
    s.set_defaults(func=cmd_dsm)

    s = sub.add_parser("train", help="train a UIT or U-Net")
    s.add_argument("--data", required=True)
    s.add_argument("--model", choices=["uit", "unet"], default="uit")
    s.add_argument("--epochs", type=int, default=20)
    s.add_argument("--batch-size", type=int, default=8)
    s.add_argument("--base-channels", type=int, default=16)
    s.add_argument("--levels", type=int, default=3)
    s.add_argument("--softmax", action="store_true")
    s.add_argument("--loss", choices=["bce", "l2"], default="bce")
    s.add_argument("--lr-max", type=float, default=1e-3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--history", default=None)
    s.add_argument("--out", required=True)
    s.add_argument("--verbose", action="store_true")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint on one or more datasets")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", nargs="+", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("bootstrap", help="degenerate-kernel frequency bootstrap errors")
    s.add_argument("--a", type=int, default=2)
    s.add_argument("--n-min", type=int, default=4)
    s.add_argument("--n-max", type=int, default=12)
    s.add_argument("--step", type=int, default=2)
    s.add_argument("--quadrature", type=int, default=2001)
    s.set_defaults(func=cmd_bootstrap)

    s = sub.add_parser("disk-oracle", help="analytic NtD eigenvalues for a concentric disk")
    s.add_argument("--rho", type=float, required=True)
    s.add_argument("--sigma1", type=float, required=True)
    s.add_argument("--L", type=int, default=5)
    s.set_defaults(func=cmd_disk_oracle)

    s = sub.add_parser("gradcheck", help="finite-difference checks of all differentiable ops")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--ops-only", action="store_true", help="skip the attention and model checks")
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    _echo_config(args)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:  # noqa: BLE001 - report any runtime failure with a clean exit code
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
