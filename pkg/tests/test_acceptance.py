"""End-to-end acceptance checks.

Each test prints one ``criterion N: PASS|FAIL`` line (collected again in the
terminal summary). Trained checkpoints land in ``acceptance_out/`` (or
``$CONVMG_ACCEPTANCE_DIR``) so the full reproduction run reuses them.

Deselect with ``-m "not acceptance"`` for a quick run.
"""
import math
import os
import statistics
import time
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest

from convmg import cli, fields
from convmg.loss import LossConfig
from convmg.network import (ModelKind, apply_level_operator, apply_N, build_model, vcycle)
from convmg.oracle import assemble, exact_solve, spectral_check
from convmg.problems import PROBLEMS, get_problem
from convmg.report import DEFAULT_EVAL_SEED, TableReport, evaluate, format_value
from convmg.training import (TrainConfig, finite_difference_check,
                             perturbed_kernels, save_checkpoint, train)

pytestmark = pytest.mark.acceptance

OUT = Path(os.environ.get("CONVMG_ACCEPTANCE_DIR",
                          Path(__file__).resolve().parents[1] / "acceptance_out"))
P5 = get_problem("p5")
J_ALL = list(range(3, 12))

# reference LMG values for J = 3..11
LMG_REFERENCE = {
    "p5": [0.11, 0.13, 0.15, 0.16, 0.17, 0.19, 0.20, 0.21, 0.23],
    "p9": [0.16, 0.22, 0.25, 0.28, 0.30, 0.32, 0.35, 0.37, 0.40],
    "pm": [0.073, 0.094, 0.11, 0.12, 0.13, 0.14, 0.15, 0.16, 0.17],
    "aniso2": [0.23, 0.29, 0.31, 0.33, 0.36, 0.38, 0.41, 0.44, 0.47],
    "mixed14": [0.11, 0.14, 0.15, 0.17, 0.18, 0.19, 0.21, 0.22, 0.24],
}
TOL = 0.02


def lmg_seeds(J):
    # one J=11 estimate costs close to a minute on a single core
    n = 20 if J <= 9 else (5 if J == 10 else 3)
    return [DEFAULT_EVAL_SEED + i for i in range(n)]


def fmt(values):
    return "[" + ", ".join(format_value(v) if v < 1 else "-" for v in values) + "]"


@lru_cache(maxsize=None)
def trained(kind):
    """Train ``kind`` on P5 with the default protocol; returns (checkpoint, seconds)."""
    t0 = time.perf_counter()
    ck = train(kind, P5, TrainConfig())
    elapsed = time.perf_counter() - t0
    (OUT / "checkpoints").mkdir(parents=True, exist_ok=True)
    save_checkpoint(ck, OUT / "checkpoints" / f"p5_{ModelKind(kind).value}.json")
    return ck, elapsed


@lru_cache(maxsize=None)
def rho(kind, J):
    kernels = trained(kind)[0].kernels if kind != "lmg" else None
    return evaluate(kind, P5, J, kernels).rho1


def test_criterion_1_lmg_p5(verdict):
    got = [statistics.median(evaluate("lmg", P5, J, seed=s).rho1 for s in lmg_seeds(J))
           for J in J_ALL]
    ref = LMG_REFERENCE["p5"]
    worst = max(abs(g - r) for g, r in zip(got, ref))
    ok = verdict(1, worst <= TOL, f"LMG p5 J=3..11 {fmt(got)} max |diff| {worst:.4f} <= {TOL}")
    assert ok


def test_criterion_2_aniso10_diverges(verdict):
    value = evaluate("lmg", get_problem("aniso10"), 8).rho1
    ok = verdict(2, value >= 0.9, f"LMG aniso10 J=8 rho1 {value:.4f} >= 0.9")
    assert ok


def test_criterion_3_s1mg_s(verdict):
    ck, seconds = trained("s1mg_s")
    r5, r11 = rho("s1mg_s", 5), rho("s1mg_s", 11)
    ok = verdict(3, r5 <= 0.09 and r11 <= 0.15 and seconds <= 900,
                 f"s1MG(s) J=5 {r5:.4f} <= 0.09, J=11 {r11:.4f} <= 0.15, "
                 f"training {seconds:.0f} s <= 900 s")
    assert ok


def test_criterion_4_s3mg_s(verdict):
    got = [rho("s3mg_s", J) for J in J_ALL]
    base = [rho("lmg", J) for J in J_ALL]
    beats = all(s < b for s, b in zip(got, base))
    ok = verdict(4, got[2] <= 0.07 and got[-1] <= 0.14 and beats,
                 f"s3MG(s) J=3..11 {fmt(got)}; J=5 <= 0.07, J=11 <= 0.14, "
                 f"below LMG {fmt(base)} everywhere: {beats}")
    assert ok


def test_criterion_5_generalisation_failure(verdict):
    f5, f7 = rho("fmg", 5), rho("fmg", 7)
    rs = [rho("s1mg_rs", J) for J in range(5, 9)]
    fmg_ok = f7 >= 2 * f5
    rs_ok = any(not math.isfinite(v) or v >= 0.5 for v in rs)
    ok = verdict(5, fmg_ok and rs_ok,
                 f"fMG rho(7) {f7:.4f} >= 2 x rho(5) {f5:.4f}; "
                 f"s1MG(rs) J=5..8 {fmt(rs)} reaches >= 0.5")
    assert ok


def _property_suite():
    rng = np.random.default_rng(0)
    failures = []

    def check(name, ok):
        if not ok:
            failures.append(name)

    # adjoint identities
    for _ in range(5):
        k = rng.standard_normal((3, 3))
        x, y = rng.standard_normal((15, 15)), rng.standard_normal((7, 7))
        a, b = fields.dot(fields.conv_down(x, k), y), fields.dot(x, fields.conv_up(y, k, x.shape))
        check("down/up adjoint", abs(a - b) <= 1e-12 * max(1.0, abs(a)))
        z = rng.standard_normal((15, 15))
        a = fields.dot(fields.conv_same(x, k), z)
        b = fields.dot(x, fields.conv_same_adjoint_field(z, k))
        check("same adjoint", abs(a - b) <= 1e-12 * max(1.0, abs(a)))

    trainable = [k for k in ModelKind if k is not ModelKind.LMG]
    for name, spec in PROBLEMS.items():
        # symmetric level operators
        net = build_model("s1mg_rs", 6, spec, perturbed_kernels("s1mg_rs", seed=3))
        for level in range(1, net.n_levels + 2):
            x, y = rng.standard_normal((2,) + net.level_shape(level))
            a = fields.dot(apply_level_operator(net, level, x), y)
            b = fields.dot(x, apply_level_operator(net, level, y))
            check(f"symmetry {name} level {level}", abs(a - b) <= 1e-12 * max(1.0, abs(a)))
        # exact solution is a fixed point of the cycle
        for kind in (ModelKind.LMG, ModelKind.S3MG_S):
            net = build_model(kind, 3, spec)
            A = assemble(lambda v: fields.conv_same(v, spec.stencil), net.shape)
            bvec = rng.standard_normal(net.shape)
            xs = exact_solve(A, bvec)
            err = np.max(np.abs(vcycle(net, 1, xs, bvec) - xs))
            check(f"fixed point {kind.value} {name}", err <= 1e-10 * max(1.0, np.max(np.abs(xs))))
        # dense oracle agreement
        for J in (2, 3):
            exact, est = spectral_check("lmg", spec, J)
            check(f"oracle {name} J={J}", abs(exact - est) <= 0.03)

    # linearity of N
    for kind in ModelKind:
        net = build_model(kind, 5, P5, perturbed_kernels(kind, seed=4) if kind is not ModelKind.LMG else None)
        r1, r2 = rng.standard_normal((2,) + net.shape)
        lhs, rhs = apply_N(net, 1.7 * r1 - 0.4 * r2), 1.7 * apply_N(net, r1) - 0.4 * apply_N(net, r2)
        check(f"linearity {kind.value}", np.max(np.abs(lhs - rhs)) <= 1e-12 * np.max(np.abs(rhs)))

    # reverse mode against central differences
    for kind in trainable:
        for name in ("p5", "mixed34"):
            net = build_model(kind, 3, get_problem(name), perturbed_kernels(kind, seed=1))
            worst, _ = finite_difference_check(net, LossConfig(seed=3), h=1e-5)
            check(f"gradcheck {kind.value} {name}", worst <= 1e-5)
    return failures


def test_criterion_6_property_suite(verdict):
    t0 = time.perf_counter()
    failures = _property_suite()
    seconds = time.perf_counter() - t0
    ok = verdict(6, not failures and seconds < 60,
                 f"property suite {seconds:.1f} s < 60 s, failures: {failures or 'none'}")
    assert ok


def test_criterion_7_full_reproduce(verdict, capsys):
    with capsys.disabled():
        code = cli.main(["reproduce", "--out-dir", str(OUT)])
    tables = {name: TableReport.from_csv((OUT / f"{name}.csv").read_text()) for name in PROBLEMS}
    emitted = code == 0 and all((OUT / f"{name}.md").is_file() for name in PROBLEMS)
    details, worst_all = [], 0.0
    for name, ref in LMG_REFERENCE.items():
        got = tables[name].column(ModelKind.LMG)
        worst = max(abs(got[J] - r) for J, r in zip(J_ALL, ref))
        worst_all = max(worst_all, worst)
        details.append(f"{name} {worst:.3f}")
    ok = verdict(7, emitted and worst_all <= TOL,
                 f"{len(tables)} tables written; LMG max |diff| per problem: "
                 + ", ".join(details) + f" (tol {TOL})")
    assert ok
