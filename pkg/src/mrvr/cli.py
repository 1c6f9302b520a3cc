"""Command-line interface: ``mrvr train | predict | simulate | benchmark``.

Exit codes: 0 success, 2 usage, 3 data or file error, 4 numerical failure.
"""

import argparse
import os
import re
import secrets
import sys

import numpy as np

from . import backend
from .baseline import fit_baseline
from .common import FitOptions
from .errors import DataError, FitError, ModelFormatError, NumericalError
from .fast import fit_fast
from .kernels import KernelConfig
from .metrics import rmse
from .modelio import load_model, load_table, save_model, write_table
from .sim import VARIANTS, SimConfig, run_mc, sample_dataset

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _positive_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive: {text!r}")
    return v


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1: {text!r}")
    return v


def parse_grid(text):
    """``"V=1..5;N=50..300:50"`` -> ({'V': [...], 'N': [...]}).

    Each part is ``KEY=a..b[:step]`` or a comma list ``KEY=a,b,c``.
    """
    out = {}
    for part in filter(None, (p.strip() for p in text.split(";"))):
        m = re.fullmatch(r"([VN])\s*=\s*(.+)", part)
        if not m:
            raise UsageError(f"bad grid part {part!r}")
        key, rhs = m.groups()
        r = re.fullmatch(r"(\d+)\.\.(\d+)(?::(\d+))?", rhs.strip())
        if r:
            lo, hi, step = int(r.group(1)), int(r.group(2)), int(r.group(3) or 1)
            if step < 1 or hi < lo:
                raise UsageError(f"bad range {rhs!r}")
            values = list(range(lo, hi + 1, step))
        else:
            try:
                values = [int(v) for v in rhs.split(",")]
            except ValueError:
                raise UsageError(f"bad grid values {rhs!r}") from None
        out[key] = values
    if set(out) != {"V", "N"}:
        raise UsageError("grid must define both V and N")
    return out


def build_parser():
    p = argparse.ArgumentParser(prog="mrvr", description="Multi-output relevance vector regression.")
    p.add_argument("--backend", choices=("compiled", "pure"), help="kernel backend (default: compiled if built)")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="fit a model to a CSV training set")
    t.add_argument("--data", required=True)
    t.add_argument("--method", required=True, choices=("existing", "proposed"))
    t.add_argument("--width", required=True, type=_positive_float, help="Gaussian kernel width")
    t.add_argument("--tolerance", type=_positive_float, default=0.1)
    t.add_argument("--max-iter", type=_positive_int, default=1000)
    t.add_argument("--seed", type=int, help="stored in the model file as metadata")
    t.add_argument("--out", required=True)

    pr = sub.add_parser("predict", help="predict with a saved model")
    pr.add_argument("--model", required=True)
    pr.add_argument("--data", required=True)
    pr.add_argument("--out", required=True)

    s = sub.add_parser("simulate", help="write a synthetic training set")
    s.add_argument("--v", required=True, type=_positive_int)
    s.add_argument("--n", required=True, type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--variant", choices=VARIANTS, default="sinc_translations")
    s.add_argument("--out", required=True)

    b = sub.add_parser("benchmark", help="Monte Carlo comparison of the two methods")
    b.add_argument("--grid", required=True)
    b.add_argument("--reps", type=_positive_int, default=11)
    b.add_argument("--seed", type=int)
    b.add_argument("--width", type=_positive_float, default=1.6)
    b.add_argument("--tolerance", type=_positive_float, default=0.1)
    b.add_argument("--max-iter", type=_positive_int, default=1000)
    b.add_argument("--threads", type=_positive_int, default=1)
    b.add_argument("--out", required=True, help="output directory")
    return p


def _seed(args):
    if args.seed is None:
        args.seed = secrets.randbits(32)
        print(f"seed={args.seed}")
    return args.seed


def cmd_train(args):
    X, T = load_table(args.data, "inputs+targets")
    fit = fit_fast if args.method == "proposed" else fit_baseline
    opts = FitOptions(max_iterations=args.max_iter, tolerance=args.tolerance)
    model = fit(X, T, KernelConfig(args.width), opts)
    model.seed = args.seed
    save_model(model, args.out)
    print(f"method={args.method} iterations={model.iterations} relevance_vectors={model.n_relevance} "
          f"converged={model.converged} log_marginal={model.log_marginal!r}")


def cmd_predict(args):
    model = load_model(args.model)
    X, T = load_table(args.data, "inputs")
    if X.shape[1] != model.n_inputs:
        raise DataError(f"model expects {model.n_inputs} input columns, data has {X.shape[1]}")
    V = model.n_outputs
    mean, second = model.predict(X)
    cols = [mean[:, j] for j in range(V)]
    names = [f"mean_t{j + 1}" for j in range(V)]
    if model.method_tag == "proposed":
        cols += [second[:, j, j] for j in range(V)]
        names += [f"var_t{j + 1}" for j in range(V)]
        for j in range(V):
            for k in range(V):
                cols.append(second[:, j, k])
                names.append(f"cov_{j + 1}{k + 1}" if V < 10 else f"cov_{j + 1}_{k + 1}")
    else:
        cols += [second[:, j] for j in range(V)]
        names += [f"var_t{j + 1}" for j in range(V)]
    write_table(args.out, cols, names)
    if T is not None:
        if T.shape[1] != V:
            raise DataError(f"model has {V} outputs, data has {T.shape[1]} target columns")
        print(f"rmse={rmse(T, mean)!r}")


def omega_path(out):
    root, _ = os.path.splitext(out)
    return f"{root}.omega.csv"


def cmd_simulate(args):
    seed = _seed(args)
    try:
        cfg = SimConfig(V=args.v, N=args.n, replications=1, master_seed=seed, variant=args.variant)
        data = sample_dataset(cfg, np.random.default_rng(seed))
    except ValueError as err:
        raise UsageError(str(err)) from err
    V = args.v
    write_table(args.out, [data.X[:, 0]] + [data.T[:, j] for j in range(V)],
                ["x1"] + [f"t{j + 1}" for j in range(V)])
    sidecar = omega_path(args.out)
    write_table(sidecar, [data.omega_true[:, k] for k in range(V)], [f"o{k + 1}" for k in range(V)])
    print(f"wrote {args.out} and {sidecar}")


def cmd_benchmark(args):
    seed = _seed(args)
    grid = parse_grid(args.grid)
    opts = FitOptions(max_iterations=args.max_iter, tolerance=args.tolerance)
    try:
        cfgs = [SimConfig(V=V, N=N, width=args.width, replications=args.reps, master_seed=seed)
                for V in grid["V"] for N in grid["N"]]
    except ValueError as err:
        raise UsageError(str(err)) from err
    os.makedirs(args.out, exist_ok=True)

    def progress(cell):
        print(f"V={cell.V} N={cell.N}: {cell.n_ok} ok, {cell.n_failed} failed", file=sys.stderr)

    report = run_mc(cfgs, opts, threads=args.threads, progress=progress)
    with open(os.path.join(args.out, "report.csv"), "w", newline="") as fh:
        report.to_csv(fh)
    text = report.to_text()
    with open(os.path.join(args.out, "report.txt"), "w") as fh:
        fh.write(text)
    print(text, end="")


COMMANDS = {"train": cmd_train, "predict": cmd_predict, "simulate": cmd_simulate, "benchmark": cmd_benchmark}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    if args.backend:
        try:
            backend.use(args.backend)
        except ImportError as err:
            print(f"mrvr: {err}", file=sys.stderr)
            return EXIT_USAGE
    try:
        COMMANDS[args.command](args)
    except UsageError as err:
        parser.print_usage(sys.stderr)
        print(f"mrvr: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ModelFormatError, OSError) as err:
        print(f"mrvr: {err}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FitError) as err:
        print(f"mrvr: numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
