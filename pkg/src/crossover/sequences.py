"""Treatment sequences, crossover designs, and complete randomization.

A treatment sequence is a word over the two treatment labels A and B, one
letter per period.  A crossover design fixes the set of sequences actually
run (with per-sequence unit counts) together with a possibly larger scope
of sequences that estimands may reference.  Complete randomization permutes
a fixed multiset of sequence labels across units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Mapping

import numpy as np

from .errors import EnumerationSizeError, HorizonError

LETTERS = ("A", "B")
MAX_ENUMERATED_HORIZON = 16
MAX_ENUMERATED_ASSIGNMENTS = 1_000_000


@dataclass(frozen=True, order=True)
class TreatmentSequence:
    """A word over {A, B}; one letter per period.

    Ordering is lexicographic with A < B, which fixes the column layout of
    every matrix in the package.  The empty word is allowed so that
    subsequence extraction can return it; design-level validation enforces
    positive length where required.
    """

    letters: str

    def __post_init__(self):
        bad = set(self.letters) - set(LETTERS)
        if bad:
            raise ValueError(
                f"sequence {self.letters!r} uses symbols outside {LETTERS}: {sorted(bad)}"
            )

    def __len__(self) -> int:
        return len(self.letters)

    def __str__(self) -> str:
        return self.letters

    def letter(self, period: int) -> str:
        """Treatment label at a 1-based period."""
        if not 1 <= period <= len(self.letters):
            raise IndexError(f"period {period} outside [1, {len(self.letters)}]")
        return self.letters[period - 1]

    def __add__(self, other: "TreatmentSequence | str") -> "TreatmentSequence":
        other_letters = other.letters if isinstance(other, TreatmentSequence) else other
        return TreatmentSequence(self.letters + other_letters)


def as_sequence(value: "TreatmentSequence | str") -> TreatmentSequence:
    """Coerce a plain string like ``"ABA"`` into a TreatmentSequence."""
    if isinstance(value, TreatmentSequence):
        return value
    return TreatmentSequence(str(value))


def full_sequence_set(horizon: int) -> tuple[TreatmentSequence, ...]:
    """All 2^T sequences of the given length, in lexicographic order."""
    if not 1 <= horizon <= MAX_ENUMERATED_HORIZON:
        raise HorizonError(
            f"horizon {horizon} outside [1, {MAX_ENUMERATED_HORIZON}]; supply an "
            "explicit sequence scope for longer designs"
        )
    words = [""]
    for _ in range(horizon):
        words = [w + letter for w in words for letter in LETTERS]
    return tuple(TreatmentSequence(w) for w in words)


def subsequence(z: TreatmentSequence | str, t1: int, t2: int) -> TreatmentSequence:
    """Letters of ``z`` from period ``t1`` to ``t2`` inclusive (1-based).

    Returns the empty word when ``t1 > t2``.  Either index outside
    ``[1, len(z)]`` raises IndexError.
    """
    z = as_sequence(z)
    horizon = len(z)
    for t in (t1, t2):
        if not 1 <= t <= horizon:
            raise IndexError(f"period {t} outside [1, {horizon}]")
    if t1 > t2:
        return TreatmentSequence("")
    return TreatmentSequence(z.letters[t1 - 1 : t2])


def trailing_window(z: TreatmentSequence | str, period: int, order: int) -> TreatmentSequence:
    """The last ``order`` letters up to ``period``, clipped at the start.

    For ``period <= order`` this is the full prefix up to ``period``.
    """
    z = as_sequence(z)
    return subsequence(z, max(1, period - order + 1), period)


@dataclass(frozen=True)
class CrossoverDesign:
    """A crossover design: horizon, implemented sequences, and scope.

    ``counts`` maps each implemented sequence to its fixed unit count.
    ``scope`` is the ordered set of sequences that coefficients and
    estimands range over; it defaults to the full 2^T set and must contain
    every implemented sequence.
    """

    horizon: int
    counts: Mapping[TreatmentSequence, int]
    scope: tuple[TreatmentSequence, ...] = ()

    def __post_init__(self):
        if self.horizon < 1:
            raise HorizonError(f"horizon must be >= 1, got {self.horizon}")
        counts = {as_sequence(z): int(n) for z, n in self.counts.items()}
        if not counts:
            raise ValueError("design implements no sequences")
        for z, n in counts.items():
            if len(z) != self.horizon:
                raise ValueError(f"sequence {z} has length {len(z)}, expected {self.horizon}")
            if n < 1:
                raise ValueError(f"count for {z} must be positive, got {n}")
        if self.scope:
            scope = tuple(sorted(as_sequence(z) for z in set(self.scope)))
            for z in scope:
                if len(z) != self.horizon:
                    raise ValueError(f"scope sequence {z} has length {len(z)}, expected {self.horizon}")
        else:
            scope = full_sequence_set(self.horizon)
        missing = [z for z in counts if z not in set(scope)]
        if missing:
            raise ValueError(f"scope must contain implemented sequences; missing {missing}")
        object.__setattr__(self, "counts", dict(sorted(counts.items())))
        object.__setattr__(self, "scope", scope)

    @property
    def observed(self) -> tuple[TreatmentSequence, ...]:
        return tuple(self.counts.keys())

    @property
    def n_units(self) -> int:
        return sum(self.counts.values())

    def count(self, z: TreatmentSequence | str) -> int:
        return self.counts.get(as_sequence(z), 0)


@dataclass(frozen=True)
class Assignment:
    """One realized unit-to-sequence labeling with design-fixed counts."""

    design: CrossoverDesign
    sequences: tuple[TreatmentSequence, ...]

    def __post_init__(self):
        tally: dict[TreatmentSequence, int] = {}
        for z in self.sequences:
            tally[z] = tally.get(z, 0) + 1
        if tally != self.design.counts:
            raise ValueError(
                f"assignment counts {tally} do not match design counts {self.design.counts}"
            )

    def __len__(self) -> int:
        return len(self.sequences)


def _label_template(design: CrossoverDesign) -> list[TreatmentSequence]:
    labels: list[TreatmentSequence] = []
    for z, n in design.counts.items():
        labels.extend([z] * n)
    return labels


def sample_assignment(design: CrossoverDesign, seed) -> Assignment:
    """Draw one complete randomization: a uniform permutation of labels.

    ``seed`` may be an int, a sequence of ints, or a numpy Generator;
    the same seed always yields the same assignment.
    """
    rng = np.random.default_rng(seed)
    labels = _label_template(design)
    order = rng.permutation(len(labels))
    return Assignment(design, tuple(labels[i] for i in order))


def n_assignments(design: CrossoverDesign) -> int:
    """Number of distinct assignments: N! / prod_z N_z!."""
    total = math.factorial(design.n_units)
    for n in design.counts.values():
        total //= math.factorial(n)
    return total


def enumerate_assignments(design: CrossoverDesign) -> Iterator[Assignment]:
    """Yield every distinct assignment exactly once, in lexicographic order.

    Refuses designs whose assignment count exceeds the enumeration cap.
    """
    total = n_assignments(design)
    if total > MAX_ENUMERATED_ASSIGNMENTS:
        raise EnumerationSizeError(
            f"{total} assignments exceed the enumeration cap of {MAX_ENUMERATED_ASSIGNMENTS}"
        )
    observed = design.observed
    remaining = [design.counts[z] for z in observed]
    n = design.n_units
    slots: list[TreatmentSequence] = []

    def rec() -> Iterator[Assignment]:
        if len(slots) == n:
            yield Assignment(design, tuple(slots))
            return
        for idx, z in enumerate(observed):
            if remaining[idx] == 0:
                continue
            remaining[idx] -= 1
            slots.append(z)
            yield from rec()
            slots.pop()
            remaining[idx] += 1

    return rec()


def design_from_text(text: str) -> CrossoverDesign:
    """Parse a design description.

    Format: one ``T <horizon>`` line followed by ``<sequence> <count>``
    lines.  Blank lines and ``#`` comments are ignored.  ``T = 2`` is
    accepted as a synonym for ``T 2``.
    """
    horizon: int | None = None
    counts: dict[TreatmentSequence, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.replace("=", " ").split()
        if fields[0].upper() == "T":
            if len(fields) != 2:
                raise ValueError(f"line {lineno}: expected 'T <horizon>', got {raw!r}")
            horizon = int(fields[1])
            continue
        if len(fields) != 2:
            raise ValueError(f"line {lineno}: expected '<sequence> <count>', got {raw!r}")
        try:
            z = as_sequence(fields[0])
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from exc
        if z in counts:
            raise ValueError(f"line {lineno}: duplicate sequence {z}")
        counts[z] = int(fields[1])
    if horizon is None:
        raise ValueError("design file is missing the 'T <horizon>' line")
    return CrossoverDesign(horizon, counts)


def design_to_text(design: CrossoverDesign) -> str:
    lines = [f"T {design.horizon}"]
    lines.extend(f"{z} {n}" for z, n in design.counts.items())
    return "\n".join(lines) + "\n"
