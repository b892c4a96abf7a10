"""Categorical vocabularies for simulation states and actions, and ranking labels.

A schema is plain data (JSON). States are matched by declarative clauses over
the raw snapshot; actions by glob patterns over the component id. The ranking
table maps each of the 24 answer permutations to the number of concepts the
answer shows (0-3); two or more concepts means advanced understanding.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from fnmatch import fnmatchcase
from importlib import resources
from typing import Mapping, Sequence

import numpy as np

from .exceptions import AmbiguousAction, SchemaError, UnknownRanking, UnmatchedState
from .ingest import BREAK, BREAK_KIND, InteractionSequence

ADVANCED_MIN_CONCEPTS = 2
PERMUTATIONS = tuple("".join(p) for p in itertools.permutations("1234"))

_ABSENT = object()


def _norm_cond(cond):
    if isinstance(cond, str):
        return ("in", (cond,))
    if isinstance(cond, list):
        return ("in", tuple(cond))
    if isinstance(cond, dict) and len(cond) == 1:
        (op, vals), = cond.items()
        if op in ("in", "not_in"):
            return (op, tuple([vals] if isinstance(vals, str) else vals))
    raise SchemaError(f"bad match condition {cond!r}")


def _cond_to_json(op, vals):
    if op == "in":
        return vals[0] if len(vals) == 1 else list(vals)
    return {op: list(vals)}


@dataclass(frozen=True)
class StateCategory:
    name: str
    # any-of clauses; a clause is all-of key conditions
    clauses: tuple[tuple[tuple[str, str, tuple[str, ...]], ...], ...]

    def matches(self, snapshot: Mapping[str, str]) -> bool:
        for clause in self.clauses:
            ok = True
            for key, op, vals in clause:
                v = snapshot.get(key, _ABSENT)
                hit = v in vals
                if hit != (op == "in"):
                    ok = False
                    break
            if ok:
                return True
        return False


@dataclass(frozen=True)
class ActionCategory:
    name: str
    patterns: tuple[str, ...] = ()
    is_break: bool = False
    is_fallback: bool = False

    def matches(self, component: str) -> bool:
        return any(fnmatchcase(component, p) for p in self.patterns)


@dataclass(frozen=True)
class CategorySchema:
    name: str
    states: tuple[StateCategory, ...]
    actions: tuple[ActionCategory, ...]
    label_table: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        self._validate()

    # dimensions
    @property
    def c_s(self) -> int:
        return len(self.states)

    @property
    def c_e(self) -> int:
        return len(self.actions)

    @property
    def f(self) -> int:
        return self.c_s + self.c_e

    @property
    def state_names(self) -> list[str]:
        return [s.name for s in self.states]

    @property
    def action_names(self) -> list[str]:
        return [a.name for a in self.actions]

    @property
    def feature_names(self) -> list[str]:
        return self.state_names + self.action_names

    @property
    def span_names(self) -> list[str]:
        return [f"{s}|{a}" for s in self.state_names for a in self.action_names]

    @property
    def break_index(self) -> int:
        return next(i for i, a in enumerate(self.actions) if a.is_break)

    @property
    def fallback_index(self) -> int:
        return next(i for i, a in enumerate(self.actions) if a.is_fallback)

    def state_index(self, snapshot: Mapping[str, str]) -> int:
        hits = [i for i, s in enumerate(self.states) if s.matches(snapshot)]
        if len(hits) != 1:
            raise UnmatchedState(dict(snapshot), len(hits))
        return hits[0]

    def action_index(self, event: str) -> int:
        if event == BREAK:
            return self.break_index
        hits = [i for i, a in enumerate(self.actions)
                if not (a.is_break or a.is_fallback) and a.matches(event)]
        if len(hits) > 1:
            raise AmbiguousAction(f"component {event!r} matches {[self.actions[i].name for i in hits]}")
        return hits[0] if hits else self.fallback_index

    def _validate(self):
        if not self.states or not self.actions:
            raise SchemaError("schema needs at least one state and one action category")
        names = self.state_names + self.action_names
        if len(set(self.state_names)) != self.c_s or len(set(self.action_names)) != self.c_e:
            raise SchemaError(f"duplicate category names in {names}")
        if sum(a.is_break for a in self.actions) != 1:
            raise SchemaError("exactly one action category must be the break category")
        if sum(a.is_fallback for a in self.actions) != 1:
            raise SchemaError("exactly one action category must be the fallback category")
        if self.label_table:
            if sorted(self.label_table) != sorted(PERMUTATIONS):
                raise SchemaError("label_table must have one entry per permutation of 1234")
            bad = {k: v for k, v in self.label_table.items() if v not in (0, 1, 2, 3)}
            if bad:
                raise SchemaError(f"concept counts must lie in 0..3: {bad}")
        self._check_state_partition()

    def _check_state_partition(self):
        # predicates only test membership in mentioned values, so one unseen
        # sentinel per key covers every other value
        values: dict[str, set] = {}
        for s in self.states:
            for clause in s.clauses:
                for key, _, vals in clause:
                    values.setdefault(key, set()).update(vals)
        keys = sorted(values)
        domains = [sorted(values[k]) + [_ABSENT] for k in keys]
        n_combos = int(np.prod([len(d) for d in domains])) if domains else 1
        if n_combos > 1_000_000:
            raise SchemaError("state rules mention too many values to verify")
        for combo in itertools.product(*domains):
            snap = {k: v for k, v in zip(keys, combo) if v is not _ABSENT}
            hits = [s.name for s in self.states if s.matches(snap)]
            if len(hits) != 1:
                raise SchemaError(f"state rules are not a partition: {snap} matches {hits}")

    # serialization
    def to_dict(self) -> dict:
        states = []
        for s in self.states:
            states.append({
                "name": s.name,
                "any": [{k: _cond_to_json(op, vals) for k, op, vals in clause}
                        for clause in s.clauses],
            })
        actions = []
        for a in self.actions:
            entry: dict = {"name": a.name}
            if a.is_break:
                entry["break"] = True
            elif a.is_fallback:
                entry["fallback"] = True
            else:
                entry["components"] = list(a.patterns)
            actions.append(entry)
        return {
            "name": self.name,
            "states": states,
            "actions": actions,
            "label_table": {k: self.label_table[k] for k in sorted(self.label_table)},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "CategorySchema":
        try:
            states = tuple(
                StateCategory(
                    s["name"],
                    tuple(tuple((k, *_norm_cond(c)) for k, c in clause.items())
                          for clause in s["any"]),
                )
                for s in d["states"]
            )
            actions = tuple(
                ActionCategory(a["name"], tuple(a.get("components", ())),
                               bool(a.get("break", False)), bool(a.get("fallback", False)))
                for a in d["actions"]
            )
            table = {str(k): int(v) for k, v in d.get("label_table", {}).items()}
            return cls(str(d["name"]), states, actions, table)
        except (KeyError, TypeError, AttributeError) as exc:
            raise SchemaError(f"invalid schema document: {exc!r}") from None

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def loads(cls, text: str) -> "CategorySchema":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "CategorySchema":
        with open(path, encoding="utf-8") as fh:
            return cls.loads(fh.read())


BUILTIN = ("beers_law", "capacitor")


def builtin_schema(which: str) -> CategorySchema:
    if which not in BUILTIN:
        raise ValueError(f"unknown builtin schema {which!r}; choose from {BUILTIN}")
    text = resources.files("simlearn.schemas").joinpath(f"{which}.json").read_text("utf-8")
    return CategorySchema.loads(text)


def resolve_schema(name_or_path: str) -> CategorySchema:
    """Builtin schema by name, otherwise a schema file path."""
    if name_or_path in BUILTIN:
        return builtin_schema(name_or_path)
    return CategorySchema.load(name_or_path)


@dataclass(frozen=True)
class CategorizedSequence:
    student_id: str
    state_index: np.ndarray
    action_index: np.ndarray
    duration: np.ndarray
    c_s: int
    c_e: int

    def __len__(self):
        return len(self.duration)

    @property
    def total_duration(self) -> float:
        return float(np.sum(self.duration))


def categorize(seq: InteractionSequence, schema: CategorySchema) -> CategorizedSequence:
    states = np.empty(len(seq.triplets), dtype=np.int64)
    actions = np.empty(len(seq.triplets), dtype=np.int64)
    for m, t in enumerate(seq.triplets):
        states[m] = schema.state_index(t.state)
        actions[m] = schema.break_index if t.kind == BREAK_KIND else schema.action_index(t.event)
    durations = np.array([t.duration for t in seq.triplets], dtype=np.float64)
    return CategorizedSequence(seq.student_id, states, actions, durations, schema.c_s, schema.c_e)


def concepts_understood(answer, schema: CategorySchema) -> int:
    key = "".join(str(x) for x in answer) if not isinstance(answer, str) else answer
    if key not in schema.label_table:
        raise UnknownRanking(f"{answer!r} is not a permutation of 1234 in the label table")
    return schema.label_table[key]


def label_ranking(answer, schema: CategorySchema) -> int:
    """Binary understanding label of a ranking answer (e.g. ``"3142"`` or ``(3, 1, 4, 2)``)."""
    return int(concepts_understood(answer, schema) >= ADVANCED_MIN_CONCEPTS)


def rankings_for_label(label: int, schema: CategorySchema) -> list[str]:
    return [p for p in PERMUTATIONS if label_ranking(p, schema) == label]


def concept_table(pairs: Sequence[tuple[int, int]]) -> dict[str, int]:
    """Concept counts for every permutation given ``(above, below)`` item pairs.

    Each pair stands for one concept: it counts as understood when the answer
    ranks ``above`` ahead of ``below``.
    """
    table = {}
    for perm in PERMUTATIONS:
        pos = {int(c): i for i, c in enumerate(perm)}
        table[perm] = sum(pos[a] < pos[b] for a, b in pairs)
    return table
