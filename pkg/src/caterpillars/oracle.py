"""Brute-force coalescent on labelled individuals for small n.

Keeps every block and every individual's block-size path, and counts
r-caterpillars straight from the definition: a block ``B`` with ``|B| = r``
is an r-caterpillar when some member's block size grew by exactly one at
each step up to the moment ``B`` formed.  Used to validate the census
engine, not for production runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .census import CaterpillarCensus, MergerEvent, apply_merger, created_size, new_census
from .rates import LambdaMeasure, MergerLaw, merger_law
from .rng import UniformStream

DEFAULT_CAP = 64


@dataclass
class MergeHistory:
    """Labelled merge history of individuals ``1..n``.

    Block ids ``1..n`` are the singletons ``{i}``; merged blocks get ids
    ``n+1, n+2, ...`` in order of creation.  ``events`` holds
    ``(time, merged ids, new id)`` with times cumulative from zero.
    ``leaf_paths[i]`` lists the size of the block containing ``i`` after each
    event that involved it, starting with 1.
    """

    n: int
    events: list[tuple[float, tuple[int, ...], int]] = field(default_factory=list)
    block_members: dict[int, frozenset[int]] = field(default_factory=dict)
    leaf_paths: dict[int, list[int]] = field(default_factory=dict)

    @classmethod
    def start(cls, n: int) -> MergeHistory:
        history = cls(n)
        for i in range(1, n + 1):
            history.block_members[i] = frozenset((i,))
            history.leaf_paths[i] = [1]
        return history

    def merge(self, time: float, ids) -> int:
        """Record the merger of blocks ``ids`` at ``time``; return the new id."""
        ids = tuple(sorted(ids, key=lambda bid: min(self.block_members[bid])))
        merged = {bid for _, group, _ in self.events for bid in group}
        if len(ids) < 2 or len(set(ids)) != len(ids) or merged.intersection(ids):
            raise ValueError(f"blocks {ids} cannot be merged")
        new_id = self.n + len(self.events) + 1
        members = frozenset().union(*(self.block_members[bid] for bid in ids))
        self.block_members[new_id] = members
        for i in members:
            self.leaf_paths[i].append(len(members))
        self.events.append((time, ids, new_id))
        return new_id

    def alive(self) -> list[int]:
        """Ids of the current blocks, ordered by least element."""
        merged = {bid for _, group, _ in self.events for bid in group}
        ids = [bid for bid in self.block_members if bid not in merged]
        return sorted(ids, key=lambda bid: min(self.block_members[bid]))

    def rescaled(self, factor: float) -> MergeHistory:
        """The same history with all event times multiplied by ``factor``."""
        out = MergeHistory(self.n, [], dict(self.block_members), {i: list(p) for i, p in self.leaf_paths.items()})
        out.events = [(t * factor, ids, new) for t, ids, new in self.events]
        return out


def run_oracle(
    n: int,
    measure: LambdaMeasure | MergerLaw,
    seed: int,
    replica: int = 0,
    cap: int = DEFAULT_CAP,
) -> MergeHistory:
    """Simulate the labelled coalescent on ``1..n`` down to one block.

    Uses the same merger law and the same uniform consumption order as the
    census engine; the ``k`` composition uniforms pick blocks by position in
    the least-element ordering of the remaining candidates.
    """
    if n > cap:
        raise ValueError(f"n={n} exceeds the oracle cap of {cap}")
    if n < 2:
        raise ValueError(f"need n >= 2, got {n}")
    law = merger_law(measure) if isinstance(measure, LambdaMeasure) else measure
    stream = UniformStream(seed, replica)
    history = MergeHistory.start(n)
    alive = history.alive()
    t = 0.0
    while len(alive) > 1:
        b = len(alive)
        t += stream.exponential(law.total_rate(b))
        k = law.draw_size(b, stream.uniform())
        pool = list(alive)
        chosen = []
        for _ in range(k):
            idx = min(int(stream.uniform() * len(pool)), len(pool) - 1)
            chosen.append(pool.pop(idx))
        new_id = history.merge(t, chosen)
        alive = sorted(pool + [new_id], key=lambda bid: min(history.block_members[bid]))
    return history


def definition_flags(history: MergeHistory) -> dict[int, int]:
    """For every block id: its size if it is a caterpillar by definition, else 0."""
    flags = {i: 1 for i in range(1, history.n + 1)}
    for _, _, new_id in history.events:
        members = history.block_members[new_id]
        r = len(members)
        flags[new_id] = 0
        for i in members:
            path = history.leaf_paths[i]
            prefix = path[: path.index(r) + 1]
            if all(later - earlier == 1 for earlier, later in zip(prefix, prefix[1:])):
                flags[new_id] = r
                break
    return flags


def caterpillar_blocks(history: MergeHistory, r: int) -> set[frozenset[int]]:
    """The distinct r-caterpillars of a history, evaluated from the definition."""
    return {history.block_members[bid] for bid, size in definition_flags(history).items() if size == r}


def caterpillars_from_history(history: MergeHistory, r: int) -> int:
    """Number of r-caterpillars of the history, from the definition."""
    if r < 1:
        raise ValueError(f"need r >= 1, got {r}")
    return len(caterpillar_blocks(history, r))


def census_replay(history: MergeHistory, r_max: int) -> tuple[CaterpillarCensus, dict[int, int]]:
    """Feed the history's events through the census merge rules.

    Returns the final census and, for every block id, the category the census
    rules gave it: its caterpillar size, or 0 for an other block.
    """
    census = new_census(history.n, r_max)
    category = {i: 1 for i in range(1, history.n + 1)}
    prev = 0.0
    for time, ids, new_id in history.events:
        comp = [0] * (r_max + 1)
        for bid in ids:
            comp[category[bid]] += 1
        comp = tuple(comp)
        made = created_size(comp)
        apply_merger(census, MergerEvent(time - prev, len(ids), comp, made))
        category[new_id] = made if made is not None and made <= r_max else 0
        prev = time
    return census, category


def dump_history(history: MergeHistory) -> str:
    """Line-based text form: ``EVENT <time> <ids> -> <new id>`` then ``MEMBERS``."""
    lines = [f"N {history.n}"]
    for time, ids, new_id in history.events:
        lines.append(f"EVENT {time!r} {','.join(map(str, ids))} -> {new_id}")
    lines.append("MEMBERS")
    for bid in sorted(history.block_members):
        lines.append(f"{bid} {','.join(map(str, sorted(history.block_members[bid])))}")
    return "\n".join(lines) + "\n"


def load_history(text: str) -> MergeHistory:
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines or not lines[0].startswith("N "):
        raise ValueError("history text must start with 'N <n>'")
    history = MergeHistory.start(int(lines[0].split()[1]))
    members = {}
    in_members = False
    for line in lines[1:]:
        if line == "MEMBERS":
            in_members = True
            continue
        if in_members:
            bid, _, elems = line.partition(" ")
            members[int(bid)] = frozenset(int(e) for e in elems.split(","))
            continue
        tag, time, ids, arrow, new_id = line.split()
        if tag != "EVENT" or arrow != "->":
            raise ValueError(f"malformed event line: {line!r}")
        got = history.merge(float(time), [int(i) for i in ids.split(",")])
        if got != int(new_id):
            raise ValueError(f"event creates block {got}, file says {new_id}")
    if members and members != history.block_members:
        raise ValueError("MEMBERS section disagrees with the events")
    return history
