"""
Evaluation sweeps over grid sizes and their tabular reports.

Rows carry full-precision estimates and are written as CSV with the header
``J,model,problem,rho1,seed,trained_J``. A :class:`TableReport` groups the
rows of one problem into a J-by-model grid; the markdown rendering rounds to
two significant figures and shows a divergent or non-contracting cell
(``rho1 >= 1``) as ``-``.
"""
import csv
import io
import math
import statistics
from dataclasses import dataclass, field

from .loss import LossConfig, loss
from .network import ModelKind, build_model

CSV_HEADER = ("J", "model", "problem", "rho1", "seed", "trained_J")
SENTINEL = "-"
DEFAULT_EVAL_SEED = 12345  # kept apart from training seeds


@dataclass(frozen=True)
class EvalRow:
    J: int
    model: ModelKind
    problem: str
    rho1: float
    seed: int
    trained_J: int = None  # None for untrained (builtin) models

    def __post_init__(self):
        object.__setattr__(self, "model", ModelKind.parse(self.model))


def evaluate(kind, problem, J, kernels=None, seed=DEFAULT_EVAL_SEED, trained_J=None,
             cfg=None):
    """One ``rho_1`` estimate of ``kind`` on ``problem`` at grid ``J``.

    Serializable kinds are extended to ``J``; fixed-depth kinds are rebuilt
    at their fixed depth on the larger grid.
    """
    cfg = cfg or LossConfig()
    net = build_model(kind, J, problem, kernels, operator_mode="stencil")
    rho = loss(net, LossConfig(cfg.power_k, cfg.n_batch, seed))
    return EvalRow(J, net.kind, net.problem.name, rho, seed, trained_J)


def evaluate_median(kind, problem, J, seeds, kernels=None, trained_J=None, cfg=None):
    """Median estimate over several seeds, returned with the individual rows."""
    rows = [evaluate(kind, problem, J, kernels, s, trained_J, cfg) for s in seeds]
    return statistics.median(r.rho1 for r in rows), rows


def format_value(value):
    """Two significant figures, or the sentinel for ``rho1 >= 1`` / non-finite."""
    if value is None:
        return ""
    if not math.isfinite(value) or value >= 1.0:
        return SENTINEL
    if value == 0.0:
        return "0"
    return f"{value:.2g}"


def rows_to_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([r.J, r.model.value, r.problem, repr(float(r.rho1)), r.seed,
                    "" if r.trained_J is None else r.trained_J])
    return buf.getvalue()


def rows_from_csv(text):
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if tuple(header or ()) != CSV_HEADER:
        raise ValueError(f"unexpected CSV header {header!r}")
    rows = []
    for lineno, rec in enumerate(reader, start=2):
        if not rec:
            continue
        if len(rec) != len(CSV_HEADER):
            raise ValueError(f"line {lineno}: expected {len(CSV_HEADER)} fields")
        J, model, problem, rho1, seed, trained = rec
        rows.append(EvalRow(int(J), model, problem, float(rho1), int(seed),
                            int(trained) if trained else None))
    return rows


@dataclass
class TableReport:
    """``rho_1`` of several model kinds on one problem, indexed by ``J``.

    Each cell is the median over the rows that share ``(J, model)``.
    ``failures`` maps a model to a short message when it could not be
    trained or evaluated.
    """
    problem: str
    rows: list = field(default_factory=list)
    failures: dict = field(default_factory=dict)

    def __post_init__(self):
        for r in self.rows:
            if r.problem != self.problem:
                raise ValueError(f"row for {r.problem!r} in table for {self.problem!r}")

    def add(self, row):
        if row.problem != self.problem:
            raise ValueError(f"row for {row.problem!r} in table for {self.problem!r}")
        self.rows.append(row)

    @property
    def models(self):
        present = {r.model for r in self.rows} | {ModelKind.parse(m) for m in self.failures}
        return [k for k in ModelKind if k in present]

    @property
    def grid_levels(self):
        return sorted({r.J for r in self.rows})

    def cell(self, J, model):
        model = ModelKind.parse(model)
        vals = [r.rho1 for r in self.rows if r.J == J and r.model is model]
        if not vals:
            return None
        return statistics.median(vals)

    def column(self, model):
        return {J: self.cell(J, model) for J in self.grid_levels}

    def to_csv(self):
        return rows_to_csv(self.rows)

    @classmethod
    def from_csv(cls, text):
        rows = rows_from_csv(text)
        problems = {r.problem for r in rows}
        if len(problems) != 1:
            raise ValueError(f"CSV must hold exactly one problem, found {sorted(problems)}")
        return cls(problems.pop(), rows)

    def to_markdown(self):
        models = self.models
        lines = [f"### {self.problem}", "",
                 "| J | " + " | ".join(m.label for m in models) + " |",
                 "|---|" + "---|" * len(models)]
        for J in self.grid_levels:
            cells = [format_value(self.cell(J, m)) for m in models]
            lines.append(f"| {J} | " + " | ".join(cells) + " |")
        for m, msg in sorted(self.failures.items()):
            lines.append("")
            lines.append(f"{ModelKind.parse(m).label}: failed ({msg})")
        return "\n".join(lines) + "\n"
