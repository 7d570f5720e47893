"""Named analytic test functions with gradients, Hessians and exactness ranges."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .operator import SmoothProbe
from .pmean import Exponent, as_exponent

__all__ = ["CatalogEntry", "lookup", "NAMES"]

NAMES = ("constant", "affine", "quadratic", "harmonic", "radial_power", "cubic", "aronsson")


@dataclass(frozen=True)
class CatalogEntry:
    name: str
    probe: SmoothProbe
    exact_for: object  # callable Exponent -> bool: probe is p-harmonious (exact solution)

    def is_exact(self, p) -> bool:
        return bool(self.exact_for(as_exponent(p)))


def _x(x):
    return np.asarray(x, dtype=float)


def _constant(N, c=1.0):
    return SmoothProbe(
        lambda x: np.full(_x(x).shape[:-1], float(c)),
        lambda x: np.zeros(N),
        lambda x: np.zeros((N, N)),
        name="constant",
    ), (lambda p: True)


def _affine(N, *coef):
    coef = coef or (2.0, -3.0, 0.5)[:N] + (1.0,)
    if len(coef) != N + 1:
        raise ConfigError(f"affine needs {N + 1} coefficients in dimension {N}")
    a = np.array(coef[:N], dtype=float)
    c = float(coef[N])
    return SmoothProbe(
        lambda x: _x(x) @ a + c,
        lambda x: a.copy(),
        lambda x: np.zeros((N, N)),
        name="affine",
    ), (lambda p: True)


def _quadratic(N):
    _need2(N, "quadratic")
    return SmoothProbe(
        lambda x: _x(x)[..., 0] ** 2 + 2 * _x(x)[..., 1] ** 2,
        lambda x: np.array([2 * x[0], 4 * x[1]], dtype=float),
        lambda x: np.diag([2.0, 4.0]),
        name="quadratic",
    ), (lambda p: False)


def _harmonic(N):
    _need2(N, "harmonic")
    return SmoothProbe(
        lambda x: _x(x)[..., 0] ** 2 - _x(x)[..., 1] ** 2,
        lambda x: np.array([2 * x[0], -2 * x[1]], dtype=float),
        lambda x: np.diag([2.0, -2.0]),
        name="harmonic",
    ), (lambda p: not p.is_infinite and p.value == 2.0)


def _cubic(N):
    _need2(N, "cubic")
    return SmoothProbe(
        lambda x: _x(x)[..., 0] ** 3 - _x(x)[..., 1] ** 3,
        lambda x: np.array([3 * x[0] ** 2, -3 * x[1] ** 2], dtype=float),
        lambda x: np.diag([6 * x[0], -6 * x[1]]),
        name="cubic",
    ), (lambda p: False)


def _aronsson(N):
    _need2(N, "aronsson")
    k = 4.0 / 3.0

    def grad(x):
        return np.array([k * np.sign(x[0]) * abs(x[0]) ** (k - 1), -k * np.sign(x[1]) * abs(x[1]) ** (k - 1)])

    def hess(x):
        c = k * (k - 1)
        return np.diag([c * abs(x[0]) ** (k - 2), -c * abs(x[1]) ** (k - 2)])

    return SmoothProbe(
        lambda x: np.abs(_x(x)[..., 0]) ** k - np.abs(_x(x)[..., 1]) ** k,
        grad,
        hess,
        name="aronsson",
    ), (lambda p: p.is_infinite)


def radial_alpha(N: int, p: Exponent) -> float:
    """The exponent alpha = (N-p)/(p-1) that makes |x|^-alpha p-harmonious."""
    if p.is_infinite:
        return -1.0
    if p.value == 1.0:
        raise ConfigError("radial_power has no harmonious exponent at p = 1")
    return (N - p.value) / (p.value - 1.0)


def _radial(N, alpha):
    a = float(alpha)

    def value(x):
        return np.linalg.norm(_x(x), axis=-1) ** (-a)

    def grad(x):
        x = _x(x)
        r = np.linalg.norm(x)
        return -a * r ** (-a - 2) * x

    def hess(x):
        x = _x(x)
        r = np.linalg.norm(x)
        return -a * r ** (-a - 2) * (np.eye(N) - (a + 2) * np.outer(x, x) / (r * r))

    def exact(p):
        if p.is_infinite:
            return a == -1.0
        return p.value > 1 and math.isclose(a * (p.value - 1) + p.value - N, 0.0, abs_tol=1e-12)

    return SmoothProbe(value, grad, hess, name=f"radial_power({a:g})"), exact


_CALL = re.compile(r"^\s*([a-z_]+)\s*(?:\((.*)\))?\s*$")


def lookup(spec: str, N: int, p=None) -> CatalogEntry:
    """Resolve a catalog name such as ``harmonic`` or ``radial_power(1)``.

    A bare ``radial_power`` takes alpha = (N-p)/(p-1) for the given p.
    """
    m = _CALL.match(str(spec))
    if not m or m.group(1) not in NAMES:
        raise ConfigError(f"unknown catalog entry {spec!r}; choose from {NAMES}")
    name, argtext = m.group(1), m.group(2)
    try:
        args = [float(a) for a in argtext.split(",")] if argtext and argtext.strip() else []
    except ValueError:
        raise ConfigError(f"bad arguments in {spec!r}") from None
    if name == "constant":
        probe, exact = _constant(N, *args[:1])
    elif name == "affine":
        probe, exact = _affine(N, *args)
    elif name == "radial_power":
        if args:
            alpha = args[0]
        elif p is None:
            raise ConfigError("radial_power without alpha needs p")
        else:
            alpha = radial_alpha(N, as_exponent(p))
        probe, exact = _radial(N, alpha)
    else:
        if args:
            raise ConfigError(f"{name} takes no arguments")
        probe, exact = {"quadratic": _quadratic, "harmonic": _harmonic, "cubic": _cubic,
                        "aronsson": _aronsson}[name](N)
    return CatalogEntry(name, probe, exact)


def _need2(N, name):
    if N != 2:
        raise ConfigError(f"{name} is defined in two dimensions only")
