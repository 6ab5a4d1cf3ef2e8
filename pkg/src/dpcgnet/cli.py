"""Command-line harness: ``gen-data``, ``train``, ``solve``, ``bench``, ``spectrum``.

Every option can also be given in a TOML file passed with ``--config``;
keys are the long flag names (dashes or underscores), either at top level
or in a table named after the subcommand. Flags win over file values.

Exit codes: 0 success, 2 usage or input error, 3 numerical failure.
"""

import argparse
import csv
import io
import json
import os
import sys

import numpy as np

from .sparse import NotSPDError

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class UsageError(Exception):
    pass


class NumericalFailure(Exception):
    pass


DEFAULTS = {
    "gen-data": {"kind": "poisson1d", "n_samples": 200, "seed": 0, "nx": None, "out": "dataset.npz"},
    "train": {"lr": 1e-4, "epochs": 10000, "patience": 2000, "batch": None, "seed": 0,
              "p": 64, "hidden": "64,64", "activation": "tanh", "val_fraction": 0.1,
              "out": "model.json"},
    "solve": {"problem": "poisson2d", "nx": 10, "seed": 0, "init_seed": 0, "precond": "identity",
              "deflation": "none", "k": 5, "grouping": "dd", "S": 1, "omega": 1.0, "overlap": 1,
              "shift": 0.0, "step": 1, "dt": 0.02, "k_wave": 1.0, "abs_tol": 1e-12,
              "rel_tol": 1e-9, "max_iter": None},
    "bench": {"problem": "jump_darcy", "nx": 50, "seed": 0, "precond": "icc",
              "deflation": "none,nico,tb", "k": "5", "grouping": "cl", "S": "4",
              "repetitions": 10, "omega": 1.0, "overlap": 1, "shift": 0.0, "dt": 0.02,
              "steps": 20, "k_wave": 1.0, "abs_tol": 1e-12, "rel_tol": 1e-9, "max_iter": None},
    "spectrum": {"problem": "poisson1d", "nx": 50, "seed": 0, "precond": "identity",
                 "deflation": "none", "k": 2, "grouping": "dd", "S": 1, "overlap": 1,
                 "omega": 1.0, "shift": 0.0, "k_wave": 1.0},
}


def _add_common_problem(p):
    p.add_argument("--problem", help="poisson1d | poisson2d | darcy | jump_darcy | heat")
    p.add_argument("--nx", type=int, help="nodes per axis (1-D: node count)")
    p.add_argument("--seed", type=int, help="parameter seed")
    p.add_argument("--K", type=float, help="fixed channel coefficient (jump_darcy) or diffusivity (heat)")
    p.add_argument("--precond", help="identity | jacobi | ssor | icc | asm")
    p.add_argument("--omega", type=float, help="SSOR relaxation")
    p.add_argument("--overlap", type=int, help="ASM overlap layers")
    p.add_argument("--shift", type=float, help="ICC diagonal shift")
    p.add_argument("--grouping", help="cd | dd | cl")
    p.add_argument("--model", help="trained DeepONet JSON (tb, rs, cl)")
    p.add_argument("--nico-kind", help="constant | helmholtz | rigid_body")
    p.add_argument("--k-wave", type=float, help="wavenumber of the direction vectors")


def build_parser():
    ap = argparse.ArgumentParser(prog="dpcgnet", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a training dataset")
    g.add_argument("--config")
    g.add_argument("--kind", help="poisson1d | jump_darcy | darcy | heat")
    g.add_argument("--n-samples", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--nx", type=int, help="grid size (1-D: node count)")
    g.add_argument("--out")

    t = sub.add_parser("train", help="train a DeepONet on a dataset")
    t.add_argument("--config")
    t.add_argument("--data", help="dataset file from gen-data")
    t.add_argument("--out")
    t.add_argument("--resume", help="continue from this model file")
    t.add_argument("--lr", type=float)
    t.add_argument("--epochs", type=int)
    t.add_argument("--patience", type=int)
    t.add_argument("--batch", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--p", type=int)
    t.add_argument("--hidden", help="comma-separated hidden widths")
    t.add_argument("--activation")
    t.add_argument("--val-fraction", type=float)

    s = sub.add_parser("solve", help="solve one system")
    s.add_argument("--config")
    _add_common_problem(s)
    s.add_argument("--deflation", help="none | nico | tb | rs | eig")
    s.add_argument("--k", type=int)
    s.add_argument("--S", type=int)
    s.add_argument("--init-seed", type=int, help="initial-guess seed")
    s.add_argument("--step", type=int, help="time step to solve (heat)")
    s.add_argument("--dt", type=float)
    s.add_argument("--abs-tol", type=float)
    s.add_argument("--rel-tol", type=float)
    s.add_argument("--max-iter", type=int)
    s.add_argument("--out", help="report JSON (default: stdout)")
    s.add_argument("--history", help="residual history CSV")

    b = sub.add_parser("bench", help="iteration-count sweep to CSV")
    b.add_argument("--config")
    _add_common_problem(b)
    b.add_argument("--deflation", help="comma list of sources")
    b.add_argument("--k", help="comma list of deflation counts")
    b.add_argument("--S", help="comma list of group counts")
    b.add_argument("--repetitions", type=int)
    b.add_argument("--dt", type=float)
    b.add_argument("--steps", type=int, help="time steps (heat)")
    b.add_argument("--abs-tol", type=float)
    b.add_argument("--rel-tol", type=float)
    b.add_argument("--max-iter", type=int)
    b.add_argument("--out", help="CSV path (default: stdout)")

    sp_ = sub.add_parser("spectrum", help="trunk singular values and deflated spectra")
    sp_.add_argument("--config")
    _add_common_problem(sp_)
    sp_.add_argument("--matrix", help="Matrix Market file instead of --problem")
    sp_.add_argument("--deflation", help="none | nico | tb | rs | eig")
    sp_.add_argument("--k", type=int)
    sp_.add_argument("--S", type=int)
    sp_.add_argument("--out", help="CSV path (default: stdout)")
    return ap


def _merge_config(cmd, args):
    vals = vars(args)
    if vals.get("config"):
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        try:
            with open(vals["config"], "rb") as fh:
                cfg = tomllib.load(fh)
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise UsageError(f"cannot read config {vals['config']}: {exc}")
        section = dict(cfg.get(cmd, {}))
        section.update({k: v for k, v in cfg.items() if not isinstance(v, dict)})
        for key, val in section.items():
            key = key.replace("-", "_")
            if key not in vals:
                raise UsageError(f"unknown config key {key!r} for {cmd}")
            if vals[key] is None:
                vals[key] = ",".join(map(str, val)) if isinstance(val, list) else val
    for key, val in DEFAULTS.get(cmd, {}).items():
        if vals.get(key) is None:
            vals[key] = val
    return argparse.Namespace(**vals)


def _int_list(text, name):
    try:
        out = [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--{name} expects a comma-separated list of integers, got {text!r}")
    if not out:
        raise UsageError(f"--{name} is empty")
    return out


def _load_model(path):
    if path is None:
        return None
    from .onet import ModelFormatError, load_model

    try:
        return load_model(path)
    except OSError as exc:
        raise UsageError(f"cannot read model {path}: {exc.strerror}")
    except ModelFormatError as exc:
        raise UsageError(f"{path}: {exc}")


def _write(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="") as fh:
            fh.write(text)


def cmd_gen_data(a):
    from .datasets import DATASET_KINDS, make_dataset

    if a.kind not in DATASET_KINDS:
        raise UsageError(f"unknown dataset kind {a.kind!r}; choose from {', '.join(sorted(DATASET_KINDS))}")
    if a.n_samples < 1:
        raise UsageError("--n-samples must be >= 1")
    kw = {}
    if a.nx is not None:
        kw["n" if a.kind == "poisson1d" else "nx"] = a.nx
    data = make_dataset(a.kind, a.n_samples, a.seed, **kw)
    data.save(a.out)
    manifest = {"kind": a.kind, "n_samples": a.n_samples, "seed": a.seed,
                "n_don": int(data.coords.shape[0]),
                "sensor_counts": [int(y.shape[1]) for y in data.branch_inputs],
                "meta": {k: v for k, v in data.meta.items() if k != "distribution"}}
    _write(a.out + ".manifest.json", json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    print(f"wrote {a.out} ({a.n_samples} samples, {data.coords.shape[0]} coordinates)")


def cmd_train(a):
    from .datasets import Dataset
    from .onet import DeepONetModel, save_model, train

    if a.data is None:
        raise UsageError("--data is required")
    try:
        data = Dataset.load(a.data)
    except (OSError, ValueError) as exc:
        raise UsageError(f"invalid dataset: {exc}")
    meta = data.meta
    if a.resume:
        model = _load_model(a.resume)
        fit_norm = False
    else:
        hidden = _int_list(a.hidden, "hidden")
        model = DeepONetModel.create(
            [y.shape[1] for y in data.branch_inputs], int(meta.get("d", data.coords.shape[1])),
            p=a.p, hidden=hidden, time_augmented=bool(meta.get("time_augmented", False)),
            activation=a.activation, seed=a.seed,
            branch_input_distribution=meta.get("distribution"))
        fit_norm = True
    try:
        model, hist = train(model, data, lr=a.lr, batch=a.batch, patience=a.patience,
                            max_epochs=a.epochs, seed=a.seed, val_fraction=a.val_fraction,
                            fit_normalization=fit_norm)
    except ValueError as exc:
        raise UsageError(str(exc))
    save_model(model, a.out)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "train_loss", "val_loss"])
    for e, (tl, vl) in enumerate(zip(hist["train_loss"], hist["val_loss"])):
        w.writerow([e, repr(tl), repr(vl)])
    stem = os.path.splitext(a.out)[0]
    _write(stem + "_loss.csv", buf.getvalue())
    print(f"wrote {a.out}; best epoch {hist['best_epoch']}, "
          f"val loss {hist['val_loss'][hist['best_epoch']]:.4e}")


def _solve_opts(a):
    from .krylov import SolveOptions

    try:
        return SolveOptions(abs_tol=a.abs_tol, rel_tol=a.rel_tol, max_iter=a.max_iter)
    except ValueError as exc:
        raise UsageError(str(exc))


def _check_deflation_args(source, k):
    if source in ("tb", "rs", "eig") and k < 1:
        raise UsageError(f"--k must be >= 1 for deflation {source!r}")


def cmd_solve(a):
    from .pipeline import make_cases, run_solve

    _check_deflation_args(a.deflation, a.k)
    model = _load_model(a.model)
    opts = _solve_opts(a)
    cases = make_cases(a.problem, a.nx, a.seed, model, a.K, a.dt, max(a.step, 1))
    case = cases[-1] if a.problem == "heat" else cases[0]
    rep = run_solve(case, a.precond, a.deflation, a.k, a.grouping, a.S, model,
                    basis_seed=a.seed, init_seed=a.init_seed, opts=opts, omega=a.omega,
                    overlap=a.overlap, shift=a.shift, nico_kind=a.nico_kind, k_wave=a.k_wave)
    report = rep.to_dict()
    report["config"] = {k: getattr(a, k) for k in (
        "problem", "nx", "seed", "init_seed", "precond", "deflation", "k", "grouping", "S", "K")}
    _write(a.out, json.dumps(report, indent=1) + "\n")
    if a.history:
        _write(a.history, rep.history_csv())
    if not rep.converged:
        raise NumericalFailure(f"solver did not converge: {rep.reason}")


def cmd_bench(a):
    from .pipeline import BENCH_COLUMNS, run_bench

    sources = [s.strip() for s in str(a.deflation).split(",") if s.strip()]
    ks = _int_list(a.k, "k")
    Ss = _int_list(a.S, "S")
    if any(s in ("tb", "rs", "eig") for s in sources) and min(ks) < 1:
        raise UsageError("--k values must be >= 1")
    if a.repetitions < 1:
        raise UsageError("--repetitions must be >= 1")
    model = _load_model(a.model)
    rows = run_bench(a.problem, a.nx, a.precond, sources, ks, Ss, a.grouping, a.repetitions,
                     a.seed, model, a.K, a.dt, a.steps, _solve_opts(a), a.omega, a.overlap,
                     a.shift, a.nico_kind, a.k_wave)
    buf = io.StringIO()
    w = csv.DictWriter(buf, BENCH_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    _write(a.out, buf.getvalue())


def cmd_spectrum(a):
    from .deflation import DENSE_SPECTRUM_MAX, assemble_deflation, deflated_spectrum
    from .onet import trunk_singular_values
    from .pipeline import Case, make_basis, make_cases, make_groups, _precond

    model = _load_model(a.model)
    if a.matrix:
        from .problems import ParametricProblem
        from .sparse import read_matrix_market

        try:
            A = read_matrix_market(a.matrix)
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read matrix {a.matrix}: {exc}")
        coords = np.arange(A.n, dtype=np.float64)[:, None] / max(A.n - 1, 1)
        case = Case("matrix", ParametricProblem(A, np.zeros(A.n), coords), None, coords)
    else:
        case = make_cases(a.problem, a.nx, a.seed, model, a.K)[0]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["quantity", "index", "value"])
    if model is not None:
        sig = trunk_singular_values(model, case.trunk_coords)
        for i, s in enumerate(sig):
            w.writerow(["trunk_sigma", i, repr(float(s))])
    if a.deflation != "none" or model is None:
        if case.A.n > DENSE_SPECTRUM_MAX:
            raise UsageError(f"dense spectrum limited to n <= {DENSE_SPECTRUM_MAX}, got {case.A.n}")
        _check_deflation_args(a.deflation, a.k)
        M = _precond(case, a.precond, a.S, a.omega, a.overlap, a.shift)
        D = None
        if a.deflation != "none":
            groups = make_groups(case, a.grouping, a.S, model)
            D = assemble_deflation(case.A, make_basis(case, a.deflation, a.k, model, a.seed, M,
                                                      a.nico_kind, a.k_wave), groups)
        lam = deflated_spectrum(case.A, M, D)
        for i, v in enumerate(lam):
            w.writerow(["eigenvalue", i, repr(float(v))])
    _write(a.out, buf.getvalue())


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "solve": cmd_solve,
    "bench": cmd_bench,
    "spectrum": cmd_spectrum,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        args = _merge_config(args.command, args)
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"dpcgnet {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalFailure, NotSPDError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"dpcgnet {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"dpcgnet {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
