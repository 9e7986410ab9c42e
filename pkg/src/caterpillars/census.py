"""Exact simulation of the coalescent restricted to n individuals, tracking only
how many blocks are l-caterpillars (l = 1..r_max) and how many are not.

Blocks chosen for a merger are exchangeable, so the categories of the k
merging blocks form a multivariate hypergeometric sample from the category
counts; the full partition is never stored.

Random numbers are consumed in a fixed order at every event:

1. one uniform for the exponential holding time at the total rate,
2. one uniform for the merger size,
3. ``k`` uniforms for the composition, each choosing one of the remaining
   blocks uniformly; categories are scanned as singletons, 2-caterpillars,
   ..., r_max-caterpillars, other blocks.

Only draw 1 depends on the overall scale of the measure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rates import LambdaMeasure, MergerLaw, merger_law
from .rng import UniformStream


class CensusError(RuntimeError):
    """The census was asked to apply an event it cannot contain."""


class TerminalStateError(CensusError):
    """No merger is possible: a single block remains."""


@dataclass
class CaterpillarCensus:
    """Category counts of the alive blocks.

    ``counts[l]`` for ``l = 1..r_max`` is the number of alive l-caterpillars
    (``counts[0]`` is unused); ``cumulative[r]`` for ``r = 2..r_max`` is the
    number of r-caterpillars seen so far.
    """

    n: int
    r_max: int
    counts: list[int]
    other_blocks: int
    cumulative: list[int]
    coalescent_time: float = 0.0
    events: int = 0

    @property
    def block_total(self) -> int:
        return sum(self.counts) + self.other_blocks

    def xi(self) -> dict[int, int]:
        """Caterpillar totals seen so far, ``{1: n, 2: ..., r_max: ...}``."""
        out = {1: self.n}
        out.update({r: self.cumulative[r] for r in range(2, self.r_max + 1)})
        return out


@dataclass(frozen=True)
class MergerEvent:
    """One merger: ``composition[0]`` counts chosen other blocks,
    ``composition[l]`` chosen l-caterpillars."""

    holding_time: float
    k: int
    composition: tuple[int, ...]
    created: int | None = None


def new_census(n: int, r_max: int) -> CaterpillarCensus:
    if n < 2:
        raise ValueError(f"need n >= 2, got {n}")
    if not 2 <= r_max <= n:
        raise ValueError(f"need 2 <= r_max <= n, got r_max={r_max}, n={n}")
    counts = [0] * (r_max + 1)
    counts[1] = n
    return CaterpillarCensus(n, r_max, counts, 0, [0] * (r_max + 1))


def created_size(composition) -> int | None:
    """Caterpillar size made by a merger of this composition, if any.

    Only a pairwise merger of a singleton with an l-caterpillar makes an
    (l+1)-caterpillar; the result may exceed ``r_max``.
    """
    if sum(composition) != 2 or composition[0] or composition[1] == 0:
        return None
    if composition[1] == 2:
        return 2
    for size in range(2, len(composition)):
        if composition[size]:
            return size + 1
    return None


def draw_composition(census: CaterpillarCensus, k: int, stream: UniformStream) -> tuple[int, ...]:
    r_max = census.r_max
    avail = census.counts[1:] + [census.other_blocks]
    chosen = [0] * (r_max + 1)
    remaining = sum(avail)
    if k > remaining:
        raise CensusError(f"cannot choose {k} of {remaining} blocks")
    for _ in range(k):
        idx = min(int(stream.uniform() * remaining), remaining - 1)
        for c, a in enumerate(avail):
            if idx < a:
                avail[c] -= 1
                chosen[c] += 1
                break
            idx -= a
        remaining -= 1
    return (chosen[-1], *chosen[:-1])


def sample_event(
    census: CaterpillarCensus, law: MergerLaw | LambdaMeasure, stream: UniformStream
) -> MergerEvent:
    """Draw the next merger from the current census."""
    if isinstance(law, LambdaMeasure):
        law = merger_law(law)
    b = census.block_total
    if b < 2:
        raise TerminalStateError("a single block remains")
    hold = stream.exponential(law.total_rate(b))
    k = law.draw_size(b, stream.uniform())
    composition = draw_composition(census, k, stream)
    return MergerEvent(hold, k, composition, created_size(composition))


def apply_merger(census: CaterpillarCensus, event: MergerEvent) -> CaterpillarCensus:
    """Merge the chosen blocks into one and classify the new block, in place."""
    comp = event.composition
    if len(comp) != census.r_max + 1:
        raise CensusError(f"composition has {len(comp)} categories, expected {census.r_max + 1}")
    if event.k < 2 or sum(comp) != event.k:
        raise CensusError(f"composition {comp} does not describe a merger of {event.k} blocks")
    if comp[0] > census.other_blocks or any(
        comp[size] > census.counts[size] for size in range(1, census.r_max + 1)
    ):
        raise CensusError(f"composition {comp} infeasible for counts {census.counts}")
    if event.created != created_size(comp):
        raise CensusError(f"event claims created={event.created} for composition {comp}")

    census.other_blocks -= comp[0]
    for size in range(1, census.r_max + 1):
        census.counts[size] -= comp[size]
    made = event.created
    if made is not None and made <= census.r_max:
        census.counts[made] += 1
        census.cumulative[made] += 1
    else:
        census.other_blocks += 1
    census.coalescent_time += event.holding_time
    census.events += 1
    return census


def _run_census(n, r_max, law, stream, raw_grid=None, out=None) -> CaterpillarCensus:
    """Fused event loop equivalent to alternating :func:`sample_event` and
    :func:`apply_merger`, consuming uniforms in the same order.

    With ``raw_grid`` given, writes snapshots into ``out`` and stops after
    the last grid time is passed.
    """
    # cat[0] holds other blocks; singletons first, then larger caterpillars, then other.
    cat = [0] * (r_max + 1)
    cat[1] = n
    cumulative = [0] * (r_max + 1)
    scan = list(range(1, r_max + 1)) + [0]
    uniform = stream.uniform
    total_rate = law.total_rate
    draw_size = law.draw_size
    log1p = math.log1p
    b = n
    t = 0.0
    events = 0
    j = 0
    n_grid = 0 if raw_grid is None else len(raw_grid)
    while b > 1:
        hold = -log1p(-uniform()) / total_rate(b)
        k = draw_size(b, uniform())
        if raw_grid is not None:
            end = t + hold
            while j < n_grid and raw_grid[j] < end:
                _write_row(out[j], cat, b, n)
                j += 1
            if j == n_grid:
                break
        if k == 2:
            idx = int(uniform() * b)
            if idx >= b:
                idx = b - 1
            for c1 in scan:
                if idx < cat[c1]:
                    break
                idx -= cat[c1]
            cat[c1] -= 1
            rest = b - 1
            idx = int(uniform() * rest)
            if idx >= rest:
                idx = rest - 1
            for c2 in scan:
                if idx < cat[c2]:
                    break
                idx -= cat[c2]
            cat[c2] -= 1
            made = c1 + c2 if c1 and c2 and (c1 == 1 or c2 == 1) else 0
            if 0 < made <= r_max:
                cat[made] += 1
                cumulative[made] += 1
            else:
                cat[0] += 1
        else:
            remaining = b
            for _ in range(k):
                idx = int(uniform() * remaining)
                if idx >= remaining:
                    idx = remaining - 1
                for c in scan:
                    if idx < cat[c]:
                        break
                    idx -= cat[c]
                cat[c] -= 1
                remaining -= 1
            cat[0] += 1
        b -= k - 1
        t += hold
        events += 1
    if raw_grid is not None:
        while j < n_grid:
            _write_row(out[j], cat, b, n)
            j += 1
    census = CaterpillarCensus(n, r_max, [0] + cat[1:], cat[0], cumulative, t, events)
    return census


def _write_row(row, cat, b, n) -> None:
    row[0] = b / n
    for size in range(1, len(cat)):
        row[size] = cat[size] / n


@dataclass
class TotalsResult:
    n: int
    r_max: int
    seed: int
    replica: int
    xi: dict[int, int]
    events: int
    coalescent_time: float


def run_totals(
    n: int, measure: LambdaMeasure, r_max: int, seed: int, replica: int = 0
) -> TotalsResult:
    """Run to a single block; return the caterpillar totals ``xi_1..xi_r_max``.

    ``xi[1]`` is ``n`` by definition.
    """
    new_census(n, r_max)
    census = _run_census(n, r_max, merger_law(measure), UniformStream(seed, replica))
    return TotalsResult(n, r_max, seed, replica, census.xi(), census.events, census.coalescent_time)


def time_unit(measure: LambdaMeasure, n: int) -> float:
    """Unscaled coalescent time corresponding to one unit of rescaled time.

    For alpha in (1, 2): ``alpha / (A_Lambda n**(alpha-1) Gamma(2-alpha))``.
    For the Kingman point mass of weight c: ``2 / (c n)``, the alpha -> 2 limit
    of the same expression along Beta measures.
    """
    if measure.is_kingman:
        return 2.0 / (measure.scale * n)
    a = measure.alpha
    return a / (measure.A_Lambda * n ** (a - 1.0) * math.gamma(2.0 - a))


@dataclass
class TrajectoryResult:
    n: int
    seed: int
    replica: int
    time_grid: np.ndarray
    X: np.ndarray  # shape (len(time_grid), r_max + 1); column 0 is X_0

    def frame(self):
        for i, t in enumerate(self.time_grid):
            for r in range(self.X.shape[1]):
                yield float(t), r, float(self.X[i, r])


def run_trajectory(
    n: int, measure: LambdaMeasure, r_max: int, time_grid, seed: int, replica: int = 0
) -> TrajectoryResult:
    """Rescaled block and caterpillar counts ``X_0..X_r_max`` at each grid time.

    Row ``i`` holds the state in force at rescaled time ``time_grid[i]``:
    ``X_0`` is the block count over ``n``, ``X_l`` the l-caterpillar count
    over ``n``.  The run stops once the last grid time is passed.
    """
    grid = np.asarray(time_grid, dtype=float)
    if grid.ndim != 1 or len(grid) == 0:
        raise ValueError("time_grid must be a non-empty sequence")
    if grid[0] < 0 or np.any(np.diff(grid) <= 0):
        raise ValueError("time_grid must be non-negative and strictly increasing")
    new_census(n, r_max)
    raw = (grid * time_unit(measure, n)).tolist()
    out = np.empty((len(grid), r_max + 1))
    _run_census(n, r_max, merger_law(measure), UniformStream(seed, replica), raw, out)
    return TrajectoryResult(n, seed, replica, grid, out)
