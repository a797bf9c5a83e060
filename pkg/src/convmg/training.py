"""
Gradient-based fitting of network kernels on small grids.

The loss ``rho_1 = S**(1/2k)`` with ``S = mean_j ||B^k z_j||^2`` is
differentiated exactly. The forward powers ``y_m = B^m z`` are kept as plain
arrays; the cotangent is then pulled back one power at a time by re-running
``B`` on ``y_m`` under the tape, so only one application of ``B`` is ever
recorded at once. Kernels shared between levels receive the sum of the
contributions from every level that uses them.
"""
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import fields
from .loss import LossConfig, loss, sample_rademacher
from .network import (ModelKind, apply_error_propagation, build_model,
                      initial_kernels, kernel_names)
from .problems import get_problem

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
MAX_BAD_STEPS = 10


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 600
    learning_rate: float = 1e-2
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    momentum: float = 0.9
    lr_decay: float = 0.1  # final learning rate as a fraction of the initial one
    train_J: int = 5
    train_grids: tuple = None  # grids whose losses are summed; default (train_J,)
    resample_each_step: bool = True
    seed: int = 0
    power_k: int = 10
    n_batch: int = 10

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not 2 <= self.train_J <= 5:
            raise ValueError(f"train_J must lie in [2, 5], got {self.train_J}")
        if self.train_grids is None:
            grids = (self.train_J,)
        else:
            grids = tuple(sorted({int(j) for j in self.train_grids}))
        object.__setattr__(self, "train_grids", grids)
        if self.train_J not in grids or not all(2 <= j <= 5 for j in grids):
            raise ValueError(f"train_grids {grids} must lie in [2, 5] and contain "
                             f"train_J={self.train_J}")

    @property
    def grids(self):
        return self.train_grids

    def loss_config(self, step, J=None):
        """Estimator settings for one step; each grid draws its own vectors."""
        seed = self.seed * 1_000_003 + (step if self.resample_each_step else 0)
        if J is not None and len(self.grids) > 1:
            seed = seed * 8 + J
        return LossConfig(self.power_k, self.n_batch, seed)


def _vjp_error_propagation(net, x, cotangent, names):
    params = {name: ad.Var(net.kernels[name]) for name in names}
    table = dict(net.kernels)
    table.update(params)
    xv = ad.Var(x)
    out = apply_error_propagation(net, xv, table)
    out.backward(cotangent)
    grads = {name: (p.grad if p.grad is not None else np.zeros_like(p.value))
             for name, p in params.items()}
    return xv.grad, grads


def gradient(net, cfg=LossConfig()):
    """Loss value and its exact gradient with respect to every trainable kernel.

    Returns
    -------
    rho1 : float
        The loss; ``inf`` for a divergent network (gradients are then None).
    grads : dict
        Kernel name to gradient array, same shape as the kernel.
    """
    names = tuple(net.trainable)
    if not names:
        raise TrainingError(f"{net.kind.value} has no trainable kernels")
    z = sample_rademacher(net.shape, cfg.n_batch, cfg.seed)
    with np.errstate(over="ignore", invalid="ignore"):
        ys = [z]
        for _ in range(cfg.power_k):
            ys.append(apply_error_propagation(net, ys[-1]))
        s = float(np.mean(np.sum(ys[-1] ** 2, axis=(-2, -1))))
    if not math.isfinite(s) or s == 0.0:
        return (math.inf if not math.isfinite(s) else 0.0), None

    lam = (2.0 / cfg.n_batch) * ys[-1]
    total = {name: np.zeros_like(net.kernels[name]) for name in names}
    for m in range(cfg.power_k - 1, -1, -1):
        lam, g = _vjp_error_propagation(net, ys[m], lam, names)
        for name in names:
            total[name] += g[name]
    rho = s ** (1.0 / (2 * cfg.power_k))
    factor = rho / (2 * cfg.power_k * s)
    grads = {name: factor * g for name, g in total.items()}
    if not all(np.all(np.isfinite(g)) for g in grads.values()):
        return math.inf, None
    return rho, grads


class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m, self.v, self.t = {}, {}, 0

    def step(self, params, grads, lr=None):
        lr = self.lr if lr is None else lr
        self.t += 1
        out = {}
        for name, p in params.items():
            g = grads[name]
            m = self.beta1 * self.m.get(name, 0.0) + (1 - self.beta1) * g
            v = self.beta2 * self.v.get(name, 0.0) + (1 - self.beta2) * g * g
            self.m[name], self.v[name] = m, v
            mhat = m / (1 - self.beta1 ** self.t)
            vhat = v / (1 - self.beta2 ** self.t)
            out[name] = p - lr * mhat / (np.sqrt(vhat) + self.eps)
        return out


class SGD:
    def __init__(self, lr, momentum=0.0):
        self.lr, self.momentum = lr, momentum
        self.buf = {}

    def step(self, params, grads, lr=None):
        lr = self.lr if lr is None else lr
        out = {}
        for name, p in params.items():
            b = self.momentum * self.buf.get(name, 0.0) + grads[name]
            self.buf[name] = b
            out[name] = p - lr * b
        return out


@dataclass
class Checkpoint:
    kind: ModelKind
    problem: str
    train_J: int
    seed: int
    kernels: dict
    loss_history: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    aborted: bool = False
    version: int = CHECKPOINT_VERSION

    def __post_init__(self):
        self.kind = ModelKind.parse(self.kind)
        expected = set(kernel_names(self.kind))
        if set(self.kernels) != expected:
            raise CheckpointError(
                f"{self.kind.value} checkpoint needs kernels {sorted(expected)}, "
                f"got {sorted(self.kernels)}")

    def network(self, J=None, operator_mode="recursive"):
        """The trained network on grid ``J`` (serialized or fixed-depth)."""
        J = self.train_J if J is None else J
        return build_model(self.kind, J, get_problem(self.problem), self.kernels,
                           operator_mode)

    def to_json(self):
        doc = {
            "version": self.version,
            "kind": self.kind.value,
            "problem": self.problem,
            "train_J": self.train_J,
            "seed": self.seed,
            "aborted": self.aborted,
            "kernels": {name: {"size": int(k.shape[0]),
                               "values": [float(v) for v in k.ravel()]}
                        for name, k in self.kernels.items()},
            "loss_history": [float(v) for v in self.loss_history],
            "config": self.config,
        }
        return json.dumps(doc, indent=1) + "\n"

    @classmethod
    def from_json(cls, text):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"malformed checkpoint: {exc}") from None
        if not isinstance(doc, dict):
            raise CheckpointError("malformed checkpoint: expected an object")
        if doc.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {doc.get('version')!r}")
        try:
            kernels = {}
            for name, entry in doc["kernels"].items():
                size = int(entry["size"])
                vals = np.array(entry["values"], dtype=float)
                if vals.size != size * size:
                    raise CheckpointError(f"kernel {name!r} has {vals.size} values, "
                                          f"expected {size * size}")
                kernels[name] = fields.as_kernel(vals.reshape(size, size))
            return cls(kind=doc["kind"], problem=doc["problem"],
                       train_J=int(doc["train_J"]), seed=int(doc["seed"]),
                       kernels=kernels,
                       loss_history=[float(v) for v in doc["loss_history"]],
                       config=dict(doc.get("config", {})),
                       aborted=bool(doc.get("aborted", False)))
        except (KeyError, TypeError, AttributeError) as exc:
            raise CheckpointError(f"malformed checkpoint: missing or bad field {exc}") from None


def save_checkpoint(ckpt, path):
    with open(path, "w") as fh:
        fh.write(ckpt.to_json())


def load_checkpoint(path):
    with open(path) as fh:
        return Checkpoint.from_json(fh.read())


def _step_gradient(nets, cfg, step):
    rhos, total = [], {}
    for J, net in nets.items():
        rho, grads = gradient(net, cfg.loss_config(step, J))
        if grads is None:
            return math.inf, None
        rhos.append(rho)
        for k, g in grads.items():
            total[k] = total[k] + g if k in total else g
    return float(np.mean(rhos)), total


def train(kind, problem, cfg=TrainConfig(), init_kernels=None, callback=None):
    """Fit the trainable kernels of ``kind`` on ``problem``.

    The objective is the sum of ``rho_1`` over ``cfg.grids`` (just
    ``cfg.train_J`` by default); the recorded history is its mean over grids.
    Returns a :class:`Checkpoint`. If the loss stays divergent for
    ``MAX_BAD_STEPS`` consecutive steps training stops early and the returned
    checkpoint has ``aborted=True``.
    """
    kind = ModelKind.parse(kind)
    if not kernel_names(kind):
        raise TrainingError(f"{kind.value} has no trainable kernels")
    if isinstance(problem, str):
        problem = get_problem(problem)
    nets = {J: build_model(kind, J, problem, init_kernels) for J in cfg.grids}
    net = nets[cfg.train_J]
    params = {name: net.kernels[name].copy() for name in net.trainable}
    if cfg.optimizer == "adam":
        opt = Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    else:
        opt = SGD(cfg.learning_rate, cfg.momentum)

    history, bad, aborted = [], 0, False
    for step in range(cfg.steps):
        rho, grads = _step_gradient(nets, cfg, step)
        history.append(rho)
        if callback is not None:
            callback(step, rho)
        if grads is None:
            bad += 1
            if bad >= MAX_BAD_STEPS:
                log.warning("loss divergent for %d steps; aborting at step %d", bad, step)
                aborted = True
                break
            continue
        bad = 0
        frac = step / max(1, cfg.steps - 1)
        lr = cfg.learning_rate * cfg.lr_decay ** frac
        params = opt.step(params, grads, lr)
        nets = {J: n.with_kernels(params) for J, n in nets.items()}
        net = nets[cfg.train_J]

    return Checkpoint(kind=kind, problem=problem.name, train_J=cfg.train_J, seed=cfg.seed,
                      kernels={n: net.kernels[n].copy() for n in net.trainable},
                      loss_history=history, config=asdict(cfg), aborted=aborted)


def finite_difference_check(net, cfg=LossConfig(), h=1e-5):
    """Compare :func:`gradient` with central differences on every kernel entry.

    The relative error of an entry is ``|g - fd| / max(|g|, |fd|, floor)``
    where ``floor`` is ``1e-6`` times the largest gradient magnitude of that
    kernel, so entries that vanish by symmetry do not divide by zero.

    Returns
    -------
    max_rel : float
    per_kernel : dict
        Kernel name to its largest relative error.
    """
    _, grads = gradient(net, cfg)
    if grads is None:
        raise TrainingError("loss is divergent at this point; no gradient to check")
    per = {}
    for name in net.trainable:
        k = net.kernels[name]
        fd = np.zeros_like(k)
        for idx in np.ndindex(k.shape):
            kp, km = k.copy(), k.copy()
            kp[idx] += h
            km[idx] -= h
            fd[idx] = (loss(net.with_kernels({name: kp}), cfg)
                       - loss(net.with_kernels({name: km}), cfg)) / (2 * h)
        g = grads[name]
        floor = 1e-6 * max(np.max(np.abs(g)), np.max(np.abs(fd)), 1e-300)
        rel = np.abs(g - fd) / np.maximum(np.maximum(np.abs(g), np.abs(fd)), floor)
        per[name] = float(np.max(rel))
    return max(per.values()), per


def perturbed_kernels(kind, scale=0.05, seed=0):
    """Initial kernels plus seeded noise; breaks symmetries for gradient checks."""
    rng = np.random.default_rng(seed)
    return {n: k + scale * rng.standard_normal(k.shape)
            for n, k in initial_kernels(kind).items()}
