"""Activation functions with declared range/Lipschitz metadata.

The dynamics assume f maps into [0,1] with Lipschitz constant at most 1.
User-supplied activations declare both and are spot-verified on a grid.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class Activation:
    fn: Callable[[np.ndarray], np.ndarray]
    name: str = "custom"
    lo: float = 0.0
    hi: float = 1.0
    lipschitz: float = 1.0

    def __call__(self, x):
        return self.fn(np.asarray(x, dtype=float))


def logistic4() -> Activation:
    """Default activation 1 / (1 + exp(-4x)); range (0,1), Lipschitz constant 1."""
    return Activation(lambda x: 1.0 / (1.0 + np.exp(-4.0 * x)), name="logistic4")


def constant(c: float) -> Activation:
    if not 0.0 <= c <= 1.0:
        raise ValidationError(f"constant activation must lie in [0,1], got {c}")
    return Activation(lambda x: np.full_like(np.asarray(x, dtype=float), c), name=f"const{c}", lo=c, hi=c, lipschitz=0.0)


def clipped_identity() -> Activation:
    return Activation(lambda x: np.clip(x, 0.0, 1.0), name="clipid")


_BUILTIN = {"logistic4": logistic4, "clipid": clipped_identity}


def by_name(name: str) -> Activation:
    if name.startswith("const"):
        return constant(float(name[5:]))
    if name not in _BUILTIN:
        raise ValidationError(f"unknown activation {name!r}; builtins: {sorted(_BUILTIN)} or 'const<c>'")
    return _BUILTIN[name]()


def verify(act: Activation, span: float = 8.0, n_pts: int = 1000, tol: float = 1e-9) -> None:
    """Spot-check declared range and Lipschitz bound on a grid of n_pts points.

    Raises ValidationError when f leaves [0,1] or grows faster than its
    declared Lipschitz constant (which must be <= 1).
    """
    if act.lipschitz > 1.0 + tol:
        raise ValidationError(f"activation {act.name!r} declares Lipschitz {act.lipschitz} > 1")
    if not (0.0 - tol <= act.lo <= act.hi <= 1.0 + tol):
        raise ValidationError(f"activation {act.name!r} declares range [{act.lo},{act.hi}] outside [0,1]")
    x = np.linspace(-span, span, n_pts)
    y = act(x)
    if np.any(y < -tol) or np.any(y > 1.0 + tol):
        raise ValidationError(f"activation {act.name!r} leaves [0,1] on the test grid")
    if np.any(y < act.lo - 1e-6) or np.any(y > act.hi + 1e-6):
        raise ValidationError(f"activation {act.name!r} leaves its declared range on the test grid")
    dy = np.abs(np.diff(y))
    dx = np.diff(x)
    if np.any(dy > act.lipschitz * dx + tol):
        raise ValidationError(f"activation {act.name!r} violates its Lipschitz bound on the test grid")
