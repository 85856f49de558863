"""Symbolic algebra of screen actions: perturb, change media, wait.

A condition is the triple (perturbation map, media, time) that identifies one
branch of a screen. Nothing here knows about cell states; the dynamics live in
:mod:`screenode.grn`.
"""
from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .errors import ConflictingPerturbation, DuplicateCondition, NotPerturbable


class PerturbStatus(enum.Enum):
    ACTIVATE = "a"
    INTERFERE = "i"
    KNOCKOUT = "ko"
    NONE = "."

    @classmethod
    def from_code(cls, code: str) -> "PerturbStatus":
        for s in cls:
            if s.value == code:
                return s
        raise ValueError(f"unknown perturbation code {code!r}")


class PathLabel(enum.IntEnum):
    PATH1 = 1  # perturbed, stimulated
    PATH2 = 2  # perturbed, baseline media
    PATH3 = 3  # unperturbed, stimulated
    PATH4 = 4  # unperturbed, baseline media


@dataclass(frozen=True)
class PerturbationMap:
    """Gene -> status assignment. Absent genes are unperturbed.

    ``perturbable`` is the declared set of genes that may be targeted; ``None``
    means any gene. It does not take part in equality or hashing.
    """

    entries: tuple[tuple[int, PerturbStatus], ...] = ()
    perturbable: frozenset[int] | None = field(default=None, compare=False)

    def __post_init__(self):
        cleaned = tuple(sorted((int(g), s) for g, s in self.entries if s is not PerturbStatus.NONE))
        genes = [g for g, _ in cleaned]
        if len(set(genes)) != len(genes):
            raise ConflictingPerturbation(f"gene listed twice in {cleaned}")
        if self.perturbable is not None:
            bad = set(genes) - set(self.perturbable)
            if bad:
                raise NotPerturbable(f"genes {sorted(bad)} are not in the perturbable set")
        object.__setattr__(self, "entries", cleaned)

    @classmethod
    def from_dict(cls, d: Mapping[int, PerturbStatus | str], perturbable=None) -> "PerturbationMap":
        items = []
        for g, s in d.items():
            if not isinstance(s, PerturbStatus):
                s = PerturbStatus.from_code(s)
            items.append((int(g), s))
        pset = None if perturbable is None else frozenset(int(g) for g in perturbable)
        return cls(tuple(items), pset)

    def status(self, gene: int) -> PerturbStatus:
        for g, s in self.entries:
            if g == gene:
                return s
        return PerturbStatus.NONE

    def as_dict(self) -> dict[int, PerturbStatus]:
        return dict(self.entries)

    @property
    def is_none(self) -> bool:
        return not self.entries

    def key(self) -> str:
        return ",".join(f"{g}:{s.value}" for g, s in self.entries)

    def __repr__(self):
        return f"PerturbationMap({{{self.key()}}})"


NO_PERTURBATION = PerturbationMap()


@dataclass(frozen=True, order=True)
class MediaCondition:
    id: int = 0

    def __post_init__(self):
        if int(self.id) < 0:
            raise ValueError("media id must be non-negative")
        object.__setattr__(self, "id", int(self.id))

    @property
    def is_baseline(self) -> bool:
        return self.id == 0


BASELINE = MediaCondition(0)


@dataclass(frozen=True)
class ExperimentCondition:
    perturbation: PerturbationMap = NO_PERTURBATION
    media: MediaCondition = BASELINE
    time: float = 0.0

    def __post_init__(self):
        t = float(self.time)
        if not t >= 0.0:
            raise ValueError(f"time must be non-negative, got {self.time}")
        object.__setattr__(self, "time", t)
        if isinstance(self.media, int):
            object.__setattr__(self, "media", MediaCondition(self.media))

    def with_time(self, time: float) -> "ExperimentCondition":
        return ExperimentCondition(self.perturbation, self.media, time)

    def key(self) -> str:
        return f"p={self.perturbation.key()};m={self.media.id};t={self.time!r}"

    def to_json(self) -> dict:
        return {
            "perturbation": {str(g): s.value for g, s in self.perturbation.entries},
            "media": self.media.id,
            "time": self.time,
        }

    @classmethod
    def from_json(cls, rec: Mapping) -> "ExperimentCondition":
        pmap = PerturbationMap.from_dict({int(g): s for g, s in rec.get("perturbation", {}).items()})
        return cls(pmap, MediaCondition(int(rec.get("media", 0))), float(rec.get("time", 0.0)))

    @property
    def path(self) -> PathLabel:
        return classify_path(self)


_KEY_RE = re.compile(r"^p=(?P<p>[^;]*);m=(?P<m>\d+);t=(?P<t>[^;]+)$")


def parse_key(key: str) -> ExperimentCondition:
    """Inverse of :meth:`ExperimentCondition.key`."""
    m = _KEY_RE.match(key.strip())
    if m is None:
        raise ValueError(f"malformed condition key {key!r}")
    entries = {}
    if m["p"]:
        for tok in m["p"].split(","):
            g, s = tok.split(":")
            entries[int(g)] = PerturbStatus.from_code(s)
    return ExperimentCondition(PerturbationMap.from_dict(entries), MediaCondition(int(m["m"])), float(m["t"]))


def condition_to_json(cond: ExperimentCondition) -> str:
    return json.dumps(cond.to_json(), sort_keys=True)


def apply_perturbation(pmap: PerturbationMap, gene: int, status: PerturbStatus) -> PerturbationMap:
    """Return ``pmap`` with ``gene`` set to ``status``.

    Knocking out a knocked-out gene is a no-op. Any other re-targeting of an
    already perturbed gene is ill-defined and raises ConflictingPerturbation.
    """
    if status is PerturbStatus.NONE:
        raise ValueError("cannot apply the unperturbed status")
    if pmap.perturbable is not None and gene not in pmap.perturbable:
        raise NotPerturbable(f"gene {gene} is not in the perturbable set")
    current = pmap.status(gene)
    if current is PerturbStatus.KNOCKOUT and status is PerturbStatus.KNOCKOUT:
        return pmap
    if current is not PerturbStatus.NONE:
        raise ConflictingPerturbation(
            f"gene {gene} already carries {current.name}; cannot apply {status.name}"
        )
    return PerturbationMap(pmap.entries + ((gene, status),), pmap.perturbable)


def apply_media(cond: ExperimentCondition, media: MediaCondition) -> ExperimentCondition:
    """Baseline media is the identity; anything else replaces the media."""
    if media.is_baseline:
        return cond
    return ExperimentCondition(cond.perturbation, media, cond.time)


def wait(cond: ExperimentCondition, t: float) -> ExperimentCondition:
    return ExperimentCondition(cond.perturbation, cond.media, cond.time + float(t))


def compose(pmap: PerturbationMap, media: MediaCondition, t: float) -> ExperimentCondition:
    """Build the condition for perturb, then change media, then wait ``t``."""
    return wait(apply_media(ExperimentCondition(pmap), media), t)


def classify_path(cond: ExperimentCondition) -> PathLabel:
    perturbed = not cond.perturbation.is_none
    stimulated = not cond.media.is_baseline
    if perturbed and stimulated:
        return PathLabel.PATH1
    if perturbed:
        return PathLabel.PATH2
    if stimulated:
        return PathLabel.PATH3
    return PathLabel.PATH4


def enumerate_conditions(
    perturbable: Iterable[PerturbationMap],
    medias: Iterable[MediaCondition],
    time: float,
) -> list[ExperimentCondition]:
    """All (n_p + 1)(n_m + 1) conditions, perturbation-major.

    The unperturbed map and baseline media are prepended implicitly and must
    not appear in the inputs.
    """
    perts = list(perturbable)
    meds = list(medias)
    if len(set(perts)) != len(perts) or any(p.is_none for p in perts):
        raise DuplicateCondition("duplicate or unperturbed entries in perturbation list")
    if len(set(meds)) != len(meds) or any(m.is_baseline for m in meds):
        raise DuplicateCondition("duplicate or baseline entries in media list")
    return [
        ExperimentCondition(p, m, time)
        for p in [NO_PERTURBATION] + perts
        for m in [BASELINE] + meds
    ]


def grid_index(conditions: list[ExperimentCondition]) -> dict[ExperimentCondition, tuple[int, int]]:
    """Map each enumerated condition to its (perturbation index, media index)."""
    perts: list[PerturbationMap] = []
    meds: list[MediaCondition] = []
    out = {}
    for c in conditions:
        if c.perturbation not in perts:
            perts.append(c.perturbation)
        if c.media not in meds:
            meds.append(c.media)
        out[c] = (perts.index(c.perturbation), meds.index(c.media))
    return out
