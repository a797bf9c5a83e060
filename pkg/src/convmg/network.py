"""
Convolutional multigrid networks.

A network is a list of per-level records (fine to coarse) that name kernels
in a shared kernel table. Sharing a name across levels is how serialized
models reuse trained parameters; the cycle only ever looks kernels up, so
gradients from every site of use accumulate on the same table entry.

The coarse operators are never assembled. ``A_k x`` is evaluated by
prolongating ``x`` to the fine grid, applying the fine stencil and
restricting back (Galerkin product). For fast evaluation of fixed networks
the same product can instead be collapsed once into a per-level stencil
(``operator_mode="stencil"``), obtained by probing the recursive product
with an impulse.
"""
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from . import autodiff as ad
from . import fields
from .fields import identity_kernel
from .problems import ProblemSpec, get_problem

K_LINEAR = 0.5 * np.array([[0.25, 0.5, 0.25],
                           [0.5, 1.0, 0.5],
                           [0.25, 0.5, 0.25]])

JACOBI_OMEGA = 4 / 5

FIXED_DEPTH_LAYERS = 4  # two-grid layers of UNET/FMG; the fifth layer is the bottom block


class ModelKind(str, Enum):
    LMG = "lmg"
    S1MG_RS = "s1mg_rs"
    S1MG_S = "s1mg_s"
    S3MG_S = "s3mg_s"
    UNET = "unet"
    FMG = "fmg"

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).lower().replace("(", "_").replace(")", ""))
        except ValueError:
            raise ValueError(f"unknown model {name!r}; choose from "
                             f"{', '.join(k.value for k in cls)}") from None

    @property
    def serializable(self):
        return self not in (ModelKind.UNET, ModelKind.FMG)

    @property
    def label(self):
        return {"lmg": "LMG", "s1mg_rs": "s1MG(rs)", "s1mg_s": "s1MG(s)",
                "s3mg_s": "s3MG(s)", "unet": "U-Net", "fmg": "fMG"}[self.value]


@dataclass(frozen=True)
class CoarseSolver:
    """``exact_scalar`` divides by the 1x1 Galerkin operator; ``conv_pair``
    applies two trainable stride-1 convolutions."""
    variant: str
    kernels: tuple = ()


@dataclass(frozen=True)
class LevelParams:
    restriction: str
    smoothers: tuple
    stride: tuple = (2, 2)
    diag_scale: np.ndarray = field(default=None, compare=False, repr=False)


@dataclass
class MgNetwork:
    kind: ModelKind
    J: int
    problem: ProblemSpec
    levels: list
    coarse: CoarseSolver
    kernels: dict
    trainable: tuple = ()
    pre_sweeps: int = 2
    post_sweeps: int = 2
    operator_mode: str = "recursive"
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def shape(self):
        n = fields.grid_side(self.J)
        return (n, n)

    def level_shape(self, level):
        shape = self.shape
        for lp in self.levels[:level - 1]:
            shape = fields.coarse_shape(shape, lp.stride)
        return shape

    @property
    def n_levels(self):
        return len(self.levels)

    def with_kernels(self, kernels):
        """Copy with some kernel table entries replaced (values, not names)."""
        table = dict(self.kernels)
        for name, k in kernels.items():
            if name not in table:
                raise KeyError(f"network has no kernel {name!r}")
            table[name] = fields.as_kernel(k).copy()
        return replace(self, kernels=table, _cache={})

    def with_operator_mode(self, mode):
        if mode not in ("recursive", "stencil"):
            raise ValueError(f"unknown operator mode {mode!r}")
        return replace(self, operator_mode=mode, _cache={})


# ---------------------------------------------------------------------------
# operators
#
# Internal helpers take ``kern``: None for the network's own kernel table, or
# a mapping that overrides it (e.g. with differentiable Vars while training).
# ---------------------------------------------------------------------------

def _get(net, kern, name):
    return (net.kernels if kern is None else kern)[name]


def _fine(net, x):
    return ad.conv_same(x, net.problem.stencil)


def _check_level(net, level):
    if not 1 <= level <= net.n_levels + 1:
        raise ValueError(f"level {level} out of range 1..{net.n_levels + 1}")


def _galerkin_chain(net, level, x, kern, shapes):
    y = x
    for l in range(level - 1, 0, -1):
        lp = net.levels[l - 1]
        y = ad.conv_up(y, _get(net, kern, lp.restriction), shapes[l - 1], lp.stride)
    y = _fine(net, y)
    for l in range(1, level):
        lp = net.levels[l - 1]
        y = ad.conv_down(y, _get(net, kern, lp.restriction), lp.stride)
    return y


def _A(net, level, x, kern):
    if level == 1:
        return _fine(net, x)
    if net.operator_mode == "stencil" and kern is None:
        return fields.conv_same(x, galerkin_stencils(net)[level - 1])
    shapes = [net.level_shape(l) for l in range(1, level)]
    return _galerkin_chain(net, level, x, kern, shapes)


def apply_level_operator(net, level, x, kernels=None):
    """``A_k x`` for the Galerkin operator of ``level`` (1 = fine grid).

    The product ``P_{k-1} ... P_1 A_1 P_1^T ... P_{k-1}^T x`` is evaluated
    with transposed and strided convolutions; no matrix is formed.
    """
    _check_level(net, level)
    x_shape = ad.value(x).shape[-2:]
    if x_shape != net.level_shape(level):
        raise ValueError(f"field shape {x_shape} does not match level {level} "
                         f"shape {net.level_shape(level)}")
    return _A(net, level, x, kernels)


def _stencil_radius(net, level):
    r = net.problem.radius
    for lp in net.levels[:level - 1]:
        q = net.kernels[lp.restriction].shape[0] // 2
        r = (r + 2 * q) // min(lp.stride)
    return r


def galerkin_stencils(net):
    """Per-level stencils of the Galerkin operators ``A_k`` (cached).

    Entry ``k - 1`` is read off the impulse response of the recursive product
    on a grid just large enough to hold it untruncated. Restriction samples
    odd fine points and all grids are zero-padded, so applying this stencil
    with zero padding reproduces the recursive product on any grid.
    """
    if "stencils" not in net._cache:
        out = [net.problem.stencil]
        for level in range(2, net.n_levels + 2):
            r = _stencil_radius(net, level)
            shapes = [(2 * r + 1, 2 * r + 1)]
            for lp in reversed(net.levels[:level - 1]):
                n = lp.stride[0] * shapes[0][0] + lp.stride[0] - 1
                m = lp.stride[1] * shapes[0][1] + lp.stride[1] - 1
                shapes.insert(0, (n, m))
            impulse = np.zeros(shapes[-1])
            impulse[r, r] = 1.0
            y = _galerkin_chain(net, level, impulse, None, shapes)
            out.append(fields.rot180(y))
        net._cache["stencils"] = out
    return net._cache["stencils"]


def compute_diag_scale(net, level):
    """Reciprocal of the exact diagonal of ``A_level`` by comb probing.

    Indicator combs with stride ``2 * radius + 1`` are applied one at a time;
    teeth of one comb never interact, so each tooth's response at its own
    position is that point's diagonal entry.
    """
    n, m = net.level_shape(level)
    s = 2 * _stencil_radius(net, level) + 1
    diag = np.zeros((n, m))
    for a in range(min(s, n)):
        for b in range(min(s, m)):
            comb = np.zeros((n, m))
            comb[a::s, b::s] = 1.0
            y = _A(net, level, comb, None)
            diag[a::s, b::s] = y[a::s, b::s]
    if np.any(diag <= 0):
        raise ValueError(f"non-positive diagonal entry on level {level}; "
                         "restriction kernels are degenerate")
    return 1.0 / diag


# ---------------------------------------------------------------------------
# cycle
# ---------------------------------------------------------------------------

def _smooth(net, level, x, b, sweeps, kern):
    lp = net.levels[level - 1]
    for _ in range(sweeps):
        r = b if x is None else b - _A(net, level, x, kern)
        for i, name in enumerate(lp.smoothers):
            upd = ad.conv_same(r, _get(net, kern, name))
            if lp.diag_scale is not None:
                upd = ad.scale(upd, lp.diag_scale)
            x = upd if x is None else x + upd
            if i + 1 < len(lp.smoothers):
                r = _A(net, level, r, kern)
    return x


def smooth(net, level, x, b, sweeps, kernels=None):
    """Polynomial smoothing: ``sweeps`` passes of ``x += sum_i S_i(A^i r)``.

    Each pass computes ``r = b - A_k x`` and then, for every smoother kernel
    in order, adds its (diagonally rescaled) convolution of ``r`` to ``x``
    and replaces ``r`` by ``A_k r``. ``x=None`` stands for a zero guess.
    """
    _check_level(net, level)
    if level > net.n_levels:
        raise ValueError("the coarsest grid has no smoother")
    return _smooth(net, level, x, b, sweeps, kernels)


def coarse_scalar(net, kernels=None):
    """The 1x1 Galerkin operator value used by the exact coarse solve."""
    level = net.n_levels + 1
    if net.level_shape(level) != (1, 1):
        raise ValueError("exact scalar coarse solve needs a 1x1 coarsest grid, "
                         f"got {net.level_shape(level)}")
    restrictions = [_get(net, kernels, lp.restriction) for lp in net.levels]
    if any(isinstance(w, ad.Var) for w in restrictions):
        return _A(net, level, np.ones((1, 1)), kernels)
    key = ("coarse_scalar",) + tuple(w.tobytes() for w in restrictions)
    if key not in net._cache:
        net._cache[key] = _A(net, level, np.ones((1, 1)), kernels)
    return net._cache[key]


def coarse_solve(net, r, kernels=None):
    if net.coarse.variant == "exact_scalar":
        return ad.divide(r, coarse_scalar(net, kernels))
    if net.coarse.variant == "conv_pair":
        c1, c2 = net.coarse.kernels
        return ad.conv_same(ad.conv_same(r, _get(net, kernels, c1)),
                            _get(net, kernels, c2))
    raise ValueError(f"unknown coarse solver {net.coarse.variant!r}")


def _vcycle(net, level, x, b, kern):
    lp = net.levels[level - 1]
    w = _get(net, kern, lp.restriction)
    x = _smooth(net, level, x, b, net.pre_sweeps, kern)
    r = b if x is None else b - _A(net, level, x, kern)
    rc = ad.conv_down(r, w, lp.stride)
    if level == net.n_levels:
        ec = coarse_solve(net, rc, kern)
    else:
        ec = _vcycle(net, level + 1, None, rc, kern)
    corr = ad.conv_up(ec, w, ad.value(b).shape[-2:], lp.stride)
    x = corr if x is None else x + corr
    return _smooth(net, level, x, b, net.post_sweeps, kern)


def _unet(net, r, kern):
    def layer(l, v):
        if l > net.n_levels:
            c1, c2 = net.coarse.kernels
            return v + ad.conv_same(ad.conv_same(v, _get(net, kern, c1)),
                                    _get(net, kern, c2))
        lp = net.levels[l - 1]
        s = _get(net, kern, lp.smoothers[0])
        w = _get(net, kern, lp.restriction)
        h = ad.conv_down(ad.conv_same(v, s), w, lp.stride)
        u = ad.conv_up(layer(l + 1, h), w, ad.value(v).shape[-2:], lp.stride)
        return v + ad.conv_same(u, s)
    return layer(1, r)


def vcycle(net, level, x, b, kernels=None):
    """One cycle on ``level`` starting from ``x`` (``None`` means zero).

    For U-Net the network replaces the whole cycle: ``x + U(b - A x)``.
    """
    if net.kind is ModelKind.UNET:
        if level != 1:
            raise ValueError("U-Net has no coarse-level cycle")
        r = b if x is None else b - _fine(net, x)
        out = _unet(net, r, kernels)
        return out if x is None else x + out
    _check_level(net, level)
    if level > net.n_levels:
        raise ValueError("cannot cycle on the coarsest grid")
    return _vcycle(net, level, x, b, kernels)


def apply_N(net, r, kernels=None):
    """The network as the approximate inverse ``N`` acting on ``r``."""
    return vcycle(net, 1, None, r, kernels)


def apply_error_propagation(net, z, kernels=None):
    """``B z = z - N A z``."""
    return z - apply_N(net, _fine(net, z), kernels)


# ---------------------------------------------------------------------------
# model zoo
# ---------------------------------------------------------------------------

def kernel_names(kind):
    """Trainable kernel names of each model kind, in canonical order."""
    kind = ModelKind.parse(kind)
    if kind is ModelKind.LMG:
        return ()
    if kind is ModelKind.S1MG_RS:
        return ("restriction", "smoother")
    if kind is ModelKind.S1MG_S:
        return ("smoother",)
    if kind is ModelKind.S3MG_S:
        return ("smoother_1", "smoother_2", "smoother_3")
    if kind is ModelKind.UNET:
        return tuple(f"restriction_{l}" for l in range(1, FIXED_DEPTH_LAYERS + 1)) + \
            tuple(f"smoother_{l}" for l in range(1, FIXED_DEPTH_LAYERS + 2))
    return tuple(f"restriction_{l}" for l in range(1, FIXED_DEPTH_LAYERS + 1)) + \
        tuple(f"smoother_{l}" for l in range(1, FIXED_DEPTH_LAYERS + 1)) + \
        ("coarse_1", "coarse_2")


def initial_kernels(kind):
    kind = ModelKind.parse(kind)
    if kind is ModelKind.UNET:
        return {name: (K_LINEAR.copy() if name.startswith("restriction")
                       else identity_kernel())
                for name in kernel_names(kind)}
    return {name: K_LINEAR.copy() for name in kernel_names(kind)}


def build_model(kind, J, problem, kernels=None, operator_mode="recursive"):
    """Construct a network of ``kind`` for the ``(2**J - 1)``-sided grid.

    Parameters
    ----------
    kind : ModelKind or str
    J : int
        Fine grid exponent, at least 2.
    problem : ProblemSpec or str
    kernels : dict, optional
        Values for (a subset of) the trainable kernels; defaults to the
        kind's initialisation.
    operator_mode : {"recursive", "stencil"}
    """
    kind = ModelKind.parse(kind)
    if J < 2:
        raise ValueError(f"J must be >= 2, got {J}")
    if isinstance(problem, str):
        problem = get_problem(problem)
    names = kernel_names(kind)
    table = initial_kernels(kind)
    if kernels:
        unknown = set(kernels) - set(names)
        if unknown:
            raise KeyError(f"{kind.value} has no kernels {sorted(unknown)}")
        table.update({k: fields.as_kernel(v).copy() for k, v in kernels.items()})

    n_grid_levels = J - 1
    if kind is ModelKind.LMG:
        table["restriction"] = K_LINEAR.copy()
        table["jacobi"] = identity_kernel(scale=JACOBI_OMEGA)
        levels = [LevelParams("restriction", ("jacobi",)) for _ in range(n_grid_levels)]
        coarse = CoarseSolver("exact_scalar")
    elif kind is ModelKind.S1MG_RS:
        levels = [LevelParams("restriction", ("smoother",)) for _ in range(n_grid_levels)]
        coarse = CoarseSolver("exact_scalar")
    elif kind is ModelKind.S1MG_S:
        table["restriction"] = K_LINEAR.copy()
        levels = [LevelParams("restriction", ("smoother",)) for _ in range(n_grid_levels)]
        coarse = CoarseSolver("exact_scalar")
    elif kind is ModelKind.S3MG_S:
        table["restriction"] = K_LINEAR.copy()
        levels = [LevelParams("restriction", (f"smoother_{(l % 3) + 1}",))
                  for l in range(n_grid_levels)]
        coarse = CoarseSolver("exact_scalar")
    else:
        depth = min(FIXED_DEPTH_LAYERS, n_grid_levels)
        levels = [LevelParams(f"restriction_{l}", (f"smoother_{l}",))
                  for l in range(1, depth + 1)]
        if kind is ModelKind.UNET:
            bottom = f"smoother_{FIXED_DEPTH_LAYERS + 1}"
            coarse = CoarseSolver("conv_pair", (bottom, bottom))
        else:
            coarse = CoarseSolver("conv_pair", ("coarse_1", "coarse_2"))

    net = MgNetwork(kind, J, problem, levels, coarse, table, trainable=names,
                    operator_mode=operator_mode)
    if kind in (ModelKind.LMG, ModelKind.S1MG_S, ModelKind.S3MG_S):
        net.levels = [replace(lp, diag_scale=compute_diag_scale(net, l))
                      for l, lp in enumerate(net.levels, start=1)]
    return net


def serialize_to_depth(net, J_new):
    """Extend a serialized model to a finer grid, reusing its kernels."""
    if not net.kind.serializable:
        raise ValueError(f"{net.kind.value} has a fixed depth and cannot be serialized")
    if J_new < net.J:
        raise ValueError(f"J_new={J_new} is smaller than the current J={net.J}")
    if J_new == net.J:
        return net
    trained = {name: net.kernels[name] for name in net.trainable}
    return build_model(net.kind, J_new, net.problem, trained, net.operator_mode)


def model_for_grid(kind, J, problem, kernels=None, operator_mode="recursive"):
    """The network evaluated at ``J``: serialized or reused at its fixed depth."""
    return build_model(kind, J, problem, kernels, operator_mode)
