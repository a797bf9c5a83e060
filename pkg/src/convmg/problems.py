"""Model problems: Jacobi-preconditioned stencils of second-order elliptic operators."""
from dataclasses import dataclass, field

import numpy as np

from . import fields

FAMILIES = ("P5", "P9", "PM", "Anisotropic", "Mixed")


def precondition_stencil(raw):
    """Symmetric Jacobi scaling ``D^-1/2 A D^-1/2`` of a constant-coefficient stencil.

    With eliminated Dirichlet boundaries the diagonal of the assembled matrix
    is the constant stencil centre, so the scaling divides every entry by it.
    """
    raw = fields.as_kernel(raw)
    c = raw[raw.shape[0] // 2, raw.shape[1] // 2]
    if c == 0.0:
        raise ValueError("stencil centre is zero; Jacobi scaling undefined")
    if c < 0.0:
        raise ValueError("stencil centre must be positive")
    return raw / c


def stencil_for(family, epsilon=None, tau=None):
    """Return the preconditioned stencil of a problem family.

    Parameters
    ----------
    family : str
        One of ``P5``, ``P9``, ``PM``, ``Anisotropic``, ``Mixed``.
    epsilon : float, optional
        x-direction coefficient of the anisotropic operator.
    tau : float, optional
        Half the mixed-derivative coefficient.
    """
    if family == "P5":
        return np.array([[0.0, -0.25, 0.0],
                         [-0.25, 1.0, -0.25],
                         [0.0, -0.25, 0.0]])
    if family == "P9":
        k = np.zeros((5, 5))
        arm = [1 / 60, -4 / 15, 1.0, -4 / 15, 1 / 60]
        k[2, :] = arm
        k[:, 2] = arm
        return k
    if family == "PM":
        # Mehrstellen: both axis neighbours -1/5, corners -1/20 (zero row sum).
        return np.array([[-1 / 20, -1 / 5, -1 / 20],
                         [-1 / 5, 1.0, -1 / 5],
                         [-1 / 20, -1 / 5, -1 / 20]])
    if family == "Anisotropic":
        if epsilon is None or epsilon <= 0:
            raise ValueError("Anisotropic stencil needs epsilon > 0")
        v = -1.0 / (2 + 2 * epsilon)
        h = -epsilon / (2 + 2 * epsilon)
        return np.array([[0.0, v, 0.0],
                         [h, 1.0, h],
                         [0.0, v, 0.0]])
    if family == "Mixed":
        if tau is None:
            raise ValueError("Mixed stencil needs tau")
        t = tau / 8
        return np.array([[-t, -0.25, t],
                         [-0.25, 1.0, -0.25],
                         [t, -0.25, -t]])
    raise ValueError(f"unknown problem family {family!r}")


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    family: str
    epsilon: float = None
    tau: float = None
    stencil: np.ndarray = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.stencil is None:
            object.__setattr__(self, "stencil",
                               stencil_for(self.family, self.epsilon, self.tau))
        st = fields.as_kernel(self.stencil)
        st.flags.writeable = False
        object.__setattr__(self, "stencil", st)

    @property
    def radius(self):
        return self.stencil.shape[0] // 2


PROBLEMS = {
    "p5": ProblemSpec("p5", "P5"),
    "p9": ProblemSpec("p9", "P9"),
    "pm": ProblemSpec("pm", "PM"),
    "aniso2": ProblemSpec("aniso2", "Anisotropic", epsilon=2.0),
    "aniso10": ProblemSpec("aniso10", "Anisotropic", epsilon=10.0),
    "mixed14": ProblemSpec("mixed14", "Mixed", tau=0.25),
    "mixed34": ProblemSpec("mixed34", "Mixed", tau=0.75),
}


def get_problem(name):
    try:
        return PROBLEMS[name]
    except KeyError:
        raise ValueError(
            f"unknown problem {name!r}; choose from {', '.join(PROBLEMS)}") from None


def apply_fine_operator(spec, x):
    """``A_1 x``: the fine-grid operator as a black-box field map."""
    return fields.conv_same(x, spec.stencil)
