"""
Command-line entry point: ``convmg {train,eval,reproduce,gradcheck,oracle}``.

Set ``CONVMG_NUM_THREADS`` to bound the compiled kernels' thread pool and
``CONVMG_DISABLE_NUMBA=1`` to run the pure numpy path.
"""
import argparse
import json
import logging
import math
import sys
import time
from dataclasses import asdict
from pathlib import Path

from . import oracle
from ._kernels import BACKEND
from .loss import LossConfig
from .network import ModelKind, build_model, kernel_names
from .problems import PROBLEMS, get_problem
from .report import (DEFAULT_EVAL_SEED, TableReport, evaluate, format_value,
                     rows_to_csv)
from .training import (CheckpointError, TrainConfig, TrainingError,
                       finite_difference_check, load_checkpoint, perturbed_kernels,
                       save_checkpoint, train)

log = logging.getLogger("convmg")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def parse_j_range(text):
    """``"8"``, ``"3:11"`` (inclusive) or ``"3,5,7"`` to a sorted list of ints."""
    try:
        if ":" in text:
            lo, hi = (int(t) for t in text.split(":"))
            vals = list(range(lo, hi + 1))
        else:
            vals = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"bad J range {text!r}") from None
    if not vals or min(vals) < 2:
        raise UsageError(f"J range {text!r} must be non-empty with J >= 2")
    return sorted(set(vals))


def _problem(name):
    try:
        return get_problem(name)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _kind(name):
    try:
        return ModelKind.parse(name)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _train_config(args, train_J):
    grids = tuple(parse_j_range(args.train_grids)) if args.train_grids else None
    return TrainConfig(steps=args.steps, learning_rate=args.lr, optimizer=args.optimizer,
                       lr_decay=args.lr_decay, train_J=train_J, train_grids=grids,
                       seed=args.seed)


def _config_doc(cfg):
    return json.loads(json.dumps(asdict(cfg)))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_train(args):
    kind, problem = _kind(args.model), _problem(args.problem)
    if not kernel_names(kind):
        raise UsageError(f"{kind.value} has no trainable kernels")
    try:
        cfg = _train_config(args, args.J)
    except ValueError as exc:
        raise UsageError(str(exc)) from None

    every = max(1, args.steps // 10)

    def report(step, rho):
        if step % every == 0 or step == args.steps - 1:
            print(f"step {step:5d}  rho1 {rho:.6g}", flush=True)

    t0 = time.perf_counter()
    ckpt = train(kind, problem, cfg, callback=report)
    elapsed = time.perf_counter() - t0
    save_checkpoint(ckpt, args.out)
    row = evaluate(kind, problem, args.J, ckpt.kernels, args.eval_seed, args.J)
    hist = [h for h in ckpt.loss_history if math.isfinite(h)]
    if hist:
        print(f"training loss: first {hist[0]:.6g}  min {min(hist):.6g}  last {hist[-1]:.6g}")
    print(f"final rho1 at J={args.J} (eval seed {args.eval_seed}): {row.rho1:.6g}")
    print(f"checkpoint written to {args.out} ({elapsed:.1f}s)")
    if ckpt.aborted:
        print("training aborted: loss divergent", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_eval(args):
    if args.checkpoint:
        try:
            ckpt = load_checkpoint(args.checkpoint)
        except (OSError, CheckpointError) as exc:
            raise UsageError(f"cannot load checkpoint: {exc}") from None
        kind, problem = ckpt.kind, get_problem(ckpt.problem)
        kernels, trained_J = ckpt.kernels, ckpt.train_J
    else:
        if not args.model or not args.problem:
            raise UsageError("eval needs --checkpoint or both --model and --problem")
        kind, problem = _kind(args.model), _problem(args.problem)
        kernels, trained_J = None, None
    rows = [evaluate(kind, problem, J, kernels, args.seed, trained_J)
            for J in parse_j_range(args.J)]
    if args.format == "csv":
        sys.stdout.write(rows_to_csv(rows))
    else:
        for r in rows:
            print(f"{r.J}\t{format_value(r.rho1)}")
    return EXIT_OK


def _load_or_train(kind, problem, cfg, path):
    if path.exists():
        try:
            ckpt = load_checkpoint(path)
            if ckpt.config == _config_doc(cfg) and ckpt.kind is kind and ckpt.problem == problem.name:
                log.info("reusing %s", path)
                return ckpt
        except CheckpointError:
            pass
    ckpt = train(kind, problem, cfg)
    save_checkpoint(ckpt, path)
    return ckpt


def reproduce_problem(problem, out_dir, cfg, j_values, seeds, kinds=tuple(ModelKind)):
    """Train and evaluate every model kind on one problem; write CSV and markdown."""
    out_dir = Path(out_dir)
    (out_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
    table = TableReport(problem.name)
    for kind in kinds:
        kernels, trained_J = None, None
        try:
            if kernel_names(kind):
                path = out_dir / "checkpoints" / f"{problem.name}_{kind.value}.json"
                ckpt = _load_or_train(kind, problem, cfg, path)
                if ckpt.aborted:
                    table.failures[kind.value] = "training aborted; last kernels evaluated"
                kernels, trained_J = ckpt.kernels, ckpt.train_J
            for J in j_values:
                for s in seeds:
                    table.add(evaluate(kind, problem, J, kernels, s, trained_J))
                log.info("%s %s J=%d %s", problem.name, kind.value, J,
                         format_value(table.cell(J, kind)))
        except Exception as exc:  # partial table: annotate and move on
            log.exception("%s on %s failed", kind.value, problem.name)
            table.failures[kind.value] = f"{type(exc).__name__}: {exc}"
    (out_dir / f"{problem.name}.csv").write_text(table.to_csv())
    (out_dir / f"{problem.name}.md").write_text(table.to_markdown())
    return table


def cmd_reproduce(args):
    names = args.problem or list(PROBLEMS)
    problems = [_problem(n) for n in names]
    try:
        cfg = _train_config(args, args.train_J)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    j_values = parse_j_range(args.J)
    seeds = [args.eval_seed + i for i in range(args.seeds)]
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tables = []
    for p in problems:
        tables.append(reproduce_problem(p, out, cfg, j_values, seeds))
        print(tables[-1].to_markdown(), flush=True)
    (out / "tables.md").write_text("\n".join(t.to_markdown() for t in tables))
    manifest = {"train_config": asdict(cfg), "eval_seeds": seeds, "J": j_values,
                "problems": [p.name for p in problems], "backend": BACKEND,
                "failures": {t.problem: t.failures for t in tables if t.failures}}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    return EXIT_OK


def cmd_gradcheck(args):
    kind, problem = _kind(args.model), _problem(args.problem)
    if not kernel_names(kind):
        raise UsageError(f"{kind.value} has no trainable kernels")
    net = build_model(kind, args.J, problem, perturbed_kernels(kind, seed=args.seed))
    worst, per = finite_difference_check(net, LossConfig(seed=args.seed), h=args.h)
    for name, err in per.items():
        print(f"{name:14s} max rel err {err:.3e}")
    ok = worst <= args.tol
    print(f"{'PASS' if ok else 'FAIL'} max rel err {worst:.3e} (tol {args.tol:g})")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_oracle(args):
    kind, problem = _kind(args.model), _problem(args.problem)
    if args.J > oracle.MAX_J:
        raise UsageError(f"oracle is limited to J <= {oracle.MAX_J}")
    ok = True
    exact, est = oracle.spectral_check(kind, problem, args.J, cfg=LossConfig(seed=args.seed))
    diff = abs(exact - est)
    good = diff <= args.tol
    ok &= good
    print(f"{'PASS' if good else 'FAIL'} spectral: rho_exact {exact:.6f}  rho1 {est:.6f}  "
          f"|diff| {diff:.3e} (tol {args.tol:g})")
    net = build_model(kind, args.J, problem)
    if net.n_levels >= 1:
        err = oracle.galerkin_check(net, 2)
        good = err <= 1e-12
        ok &= good
        print(f"{'PASS' if good else 'FAIL'} galerkin level 2: max abs err {err:.3e}")
    return EXIT_OK if ok else EXIT_FAIL


# ---------------------------------------------------------------------------

def _add_train_flags(p, j_flag):
    p.add_argument(j_flag, type=int, default=5, help="training grid exponent (default 5)")
    p.add_argument("--train-grids", default=None,
                   help="grids trained jointly, e.g. 3:5 (default: the training grid only)")
    p.add_argument("--steps", type=int, default=600)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--lr-decay", type=float, default=0.1,
                   help="final learning rate as a fraction of --lr")
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eval-seed", type=int, default=DEFAULT_EVAL_SEED)


def build_parser():
    models = ", ".join(k.value for k in ModelKind)
    problems = ", ".join(PROBLEMS)
    ap = argparse.ArgumentParser(prog="convmg", description=__doc__.strip().splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a model's kernels and write a checkpoint")
    p.add_argument("--problem", required=True, help=problems)
    p.add_argument("--model", required=True, help=models)
    _add_train_flags(p, "--J")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="rho1 sweep over grid sizes as CSV")
    p.add_argument("--checkpoint")
    p.add_argument("--model", help=models)
    p.add_argument("--problem", help=problems)
    p.add_argument("--J", default="3:11", help="e.g. 8, 3:11 or 3,5,7")
    p.add_argument("--seed", type=int, default=DEFAULT_EVAL_SEED)
    p.add_argument("--format", choices=("csv", "table"), default="csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("reproduce", help="train all kinds and emit one table per problem")
    p.add_argument("--problem", action="append", help=f"repeatable; default all ({problems})")
    p.add_argument("--out-dir", required=True)
    _add_train_flags(p, "--train-J")
    p.add_argument("--J", default="3:11")
    p.add_argument("--seeds", type=int, default=1, help="evaluation seeds per cell")
    p.set_defaults(func=cmd_reproduce)

    p = sub.add_parser("gradcheck", help="reverse mode against central differences")
    p.add_argument("--problem", default="p5")
    p.add_argument("--model", default="s1mg_s")
    p.add_argument("--J", type=int, default=3)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("oracle", help="dense-matrix cross-checks on small grids")
    p.add_argument("--problem", default="p5")
    p.add_argument("--model", default="lmg")
    p.add_argument("--J", type=int, default=3)
    p.add_argument("--tol", type=float, default=0.03)
    p.add_argument("--seed", type=int, default=DEFAULT_EVAL_SEED)
    p.set_defaults(func=cmd_oracle)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"convmg: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingError as exc:
        print(f"convmg: training failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
