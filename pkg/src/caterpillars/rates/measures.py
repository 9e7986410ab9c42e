"""Finite measures on [0, 1] that drive a Lambda-coalescent."""

from __future__ import annotations

import math
import shlex
from dataclasses import dataclass, replace
from typing import Callable, ClassVar

from scipy import integrate

KINGMAN = "kingman"
BETA = "beta"
DENSITY = "density"


class RateDomainError(ValueError):
    """An argument lies outside the domain of a rate formula."""


class QuadratureError(ArithmeticError):
    """Adaptive quadrature failed to reach the requested tolerance."""

    def __init__(self, message: str, achieved: float):
        super().__init__(f"{message} (achieved relative error {achieved:.3g})")
        self.achieved = achieved


@dataclass(frozen=True)
class PurePower:
    """The density ``p**(1 - alpha)`` on (0, 1)."""

    alpha: float
    name: ClassVar[str] = "pure_power"

    def __call__(self, p: float) -> float:
        return p ** (1.0 - self.alpha)

    @property
    def A_Lambda(self) -> float:
        return 1.0

    @property
    def total_mass(self) -> float:
        return 1.0 / (2.0 - self.alpha)


@dataclass(frozen=True)
class BetaDensity:
    """The Beta(2 - alpha, alpha) probability density."""

    alpha: float
    name: ClassVar[str] = "beta_density"

    def __call__(self, p: float) -> float:
        a = self.alpha
        log_norm = math.lgamma(2.0 - a) + math.lgamma(a)
        return math.exp((1.0 - a) * math.log(p) + (a - 1.0) * math.log1p(-p) - log_norm)

    @property
    def A_Lambda(self) -> float:
        return 1.0 / (math.gamma(2.0 - self.alpha) * math.gamma(self.alpha))

    @property
    def total_mass(self) -> float:
        return 1.0


BUILTIN_DENSITIES: dict[str, type] = {
    PurePower.name: PurePower,
    BetaDensity.name: BetaDensity,
}


@dataclass(frozen=True)
class LambdaMeasure:
    """A driving measure, possibly multiplied by a constant ``scale``.

    ``A_Lambda`` and ``total_mass`` are those of the scaled measure.  For the
    Kingman point mass at zero, ``A_Lambda`` is the weight of the atom (the
    pairwise merger rate).  Construct instances through :meth:`kingman`,
    :meth:`beta` or :meth:`with_density` rather than directly.
    """

    kind: str
    alpha: float
    A_Lambda: float
    total_mass: float
    density: Callable[[float], float] | None = None
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in (KINGMAN, BETA, DENSITY):
            raise RateDomainError(f"unknown measure kind {self.kind!r}")
        if not self.scale > 0:
            raise RateDomainError("scale must be positive")
        if self.kind == KINGMAN:
            if self.alpha != 2.0:
                raise RateDomainError("the Kingman measure has alpha = 2")
        elif not 1.0 < self.alpha < 2.0:
            raise RateDomainError(
                f"alpha must lie in (1, 2) for a {self.kind} measure, got {self.alpha}"
            )
        if self.kind == DENSITY and self.density is None:
            raise RateDomainError("a density measure needs a density")
        if not (self.A_Lambda > 0 and self.total_mass > 0):
            raise RateDomainError("A_Lambda and total_mass must be positive")

    @classmethod
    def kingman(cls, scale: float = 1.0) -> LambdaMeasure:
        return cls(KINGMAN, 2.0, scale, scale, None, scale)

    @classmethod
    def beta(cls, alpha: float, scale: float = 1.0) -> LambdaMeasure:
        if not 1.0 < alpha < 2.0:
            raise RateDomainError(f"Beta(2 - alpha, alpha) needs alpha in (1, 2), got {alpha}")
        A = scale / (math.gamma(2.0 - alpha) * math.gamma(alpha))
        return cls(BETA, alpha, A, scale, None, scale)

    @classmethod
    def with_density(
        cls,
        alpha: float,
        density: Callable[[float], float],
        A_Lambda: float | None = None,
        total_mass: float | None = None,
        scale: float = 1.0,
    ) -> LambdaMeasure:
        """Measure ``scale * density(p) dp`` with regular-variation index ``alpha``.

        ``A_Lambda`` and ``total_mass`` refer to the unscaled density.  They are
        read from the density object when it provides them; a missing total
        mass is computed by quadrature, a missing ``A_Lambda`` is an error.
        """
        if not 1.0 < alpha < 2.0:
            raise RateDomainError(f"alpha must lie in (1, 2), got {alpha}")
        if A_Lambda is None:
            A_Lambda = getattr(density, "A_Lambda", None)
            if A_Lambda is None:
                raise RateDomainError("A_Lambda is required for a custom density")
        if total_mass is None:
            total_mass = getattr(density, "total_mass", None)
            if total_mass is None:
                total_mass = density_mass(density, alpha)
        return cls(DENSITY, alpha, scale * A_Lambda, scale * total_mass, density, scale)

    @property
    def is_kingman(self) -> bool:
        return self.kind == KINGMAN

    def pdf(self, p: float) -> float:
        """Density of the scaled measure at ``p`` (density kinds only)."""
        if self.kind == BETA:
            return self.scale * BetaDensity(self.alpha)(p)
        if self.kind == DENSITY:
            return self.scale * self.density(p)
        raise RateDomainError("the Kingman measure has no density")

    def rescaled(self, factor: float) -> LambdaMeasure:
        """The same measure multiplied by ``factor``."""
        if not factor > 0:
            raise RateDomainError("rescaling factor must be positive")
        return replace(
            self,
            A_Lambda=self.A_Lambda * factor,
            total_mass=self.total_mass * factor,
            scale=self.scale * factor,
        )

    def unscaled(self) -> LambdaMeasure:
        """The measure with ``scale`` reset to one."""
        if self.scale == 1.0:
            return self
        return replace(
            self,
            A_Lambda=self.A_Lambda / self.scale,
            total_mass=self.total_mass / self.scale,
            scale=1.0,
        )

    def spec(self) -> str:
        """Key-value description accepted by :func:`parse_measure`."""
        if self.kind == KINGMAN:
            parts = ["kind=kingman"]
        elif self.kind == BETA:
            parts = ["kind=beta", f"alpha={self.alpha!r}"]
        else:
            name = getattr(self.density, "name", None) or "custom"
            parts = ["kind=density", f"alpha={self.alpha!r}", f"density={name}"]
        if self.scale != 1.0:
            parts.append(f"scale={self.scale!r}")
        return " ".join(parts)


def density_mass(density: Callable[[float], float], alpha: float, tol: float = 1e-10) -> float:
    """Total mass of ``density`` on (0, 1), absorbing the ``p**(1 - alpha)`` pole."""

    def regular(u):
        p = u ** (1.0 / (2.0 - alpha))
        return density(p) * p ** (alpha - 1.0)

    head, _ = integrate.quad(regular, 0.0, 0.5 ** (2.0 - alpha), epsabs=0.0, epsrel=tol, limit=200)
    tail, _ = integrate.quad(density, 0.5, 1.0, epsabs=0.0, epsrel=tol, limit=200)
    return head / (2.0 - alpha) + tail


def parse_measure(text: str) -> LambdaMeasure:
    """Parse ``kind=beta alpha=1.5 scale=1.0`` style descriptions.

    >>> parse_measure("kind=kingman").alpha
    2.0
    >>> parse_measure("kind=density alpha=1.5 density=pure_power").total_mass
    2.0
    """
    fields = {}
    for token in shlex.split(text.replace(",", " ")):
        key, sep, value = token.partition("=")
        if not sep or not value:
            raise RateDomainError(f"expected key=value, got {token!r}")
        if key in fields:
            raise RateDomainError(f"duplicate key {key!r}")
        fields[key] = value
    unknown = set(fields) - {"kind", "alpha", "scale", "density"}
    if unknown:
        raise RateDomainError(f"unknown measure keys: {', '.join(sorted(unknown))}")

    kind = fields.get("kind")
    if kind not in (KINGMAN, BETA, DENSITY):
        raise RateDomainError(f"kind must be kingman, beta or density, got {kind!r}")
    scale = float(fields.get("scale", 1.0))
    if kind == KINGMAN:
        if "density" in fields or float(fields.get("alpha", 2.0)) != 2.0:
            raise RateDomainError("kind=kingman takes only an optional scale")
        return LambdaMeasure.kingman(scale)
    if "alpha" not in fields:
        raise RateDomainError(f"kind={kind} requires alpha")
    alpha = float(fields["alpha"])
    if kind == BETA:
        if "density" in fields:
            raise RateDomainError("kind=beta does not take a density")
        return LambdaMeasure.beta(alpha, scale)
    if kind == DENSITY:
        name = fields.get("density")
        if name not in BUILTIN_DENSITIES:
            raise RateDomainError(
                f"density must be one of {', '.join(BUILTIN_DENSITIES)}, got {name!r}"
            )
        return LambdaMeasure.with_density(alpha, BUILTIN_DENSITIES[name](alpha), scale=scale)
    raise RateDomainError(f"kind must be kingman, beta or density, got {kind!r}")
