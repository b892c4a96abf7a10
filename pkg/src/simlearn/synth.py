"""Synthetic cohorts with a planted behaviour/label relationship.

Every student gets a label (advanced understanding with probability
``label1_rate``) and emits a click/release log. Two signals are planted,
both scaled by ``signal_strength`` so that ``signal_strength=0`` yields
label-independent logs:

* run structure: after each action the simulation state is kept with
  probability ``state_persistence +/- signal_strength * persistence_contrast``
  (higher for label 1). Aggregate state/action time shares barely move, so
  this is mostly visible to order-aware models.
* composition: state and component draws mix the label profile into a uniform
  profile with weight ``signal_strength * profile_contrast``. This part is
  visible to the order-free Action-Span baseline too.

Time spent in a state can be scaled by ``(p_neutral / p_student) ** time_compensation``
(off by default) so that frequently visited states get shorter visits.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import InvalidConfig
from .schema import builtin_schema, rankings_for_label

# per-schema behaviour: state/action category name -> weight
PROFILES = {
    "beers_law": {
        "states": {
            "productive": {"green-green": 0.3, "green-red": 0.4, "absorbance-displayed": 0.2,
                           "not-observed": 0.1},
            "unproductive": {"green-green": 0.1, "green-red": 0.1, "absorbance-displayed": 0.3,
                             "not-observed": 0.5},
        },
        "actions": {
            "productive": {"width": 0.3, "concentration": 0.3, "pdf": 0.15,
                           "concentration-lab": 0.05, "other": 0.2},
            "unproductive": {"width": 0.15, "concentration": 0.15, "pdf": 0.1,
                             "concentration-lab": 0.25, "other": 0.35},
        },
        "components": {
            "width": ["widthSlider", "widthSpinnerUp", "widthSpinnerDown"],
            "concentration": ["concentrationSlider", "concentrationSpinnerUp"],
            "pdf": ["pdfViewer", "taskDescription"],
            "concentration-lab": ["concentrationLabSolute", "concentrationLabTab"],
            "other": ["saturatedConcentrationProbe", "wavelengthSlider", "laserToggle",
                      "solutionCombo", "absorbanceCheckbox", "resetAllButton"],
        },
    },
    "capacitor": {
        "states": {
            "productive": {"closed+energy": 0.35, "open+energy": 0.4, "closed+no-energy": 0.15,
                           "open+no-energy": 0.1},
            "unproductive": {"closed+energy": 0.25, "open+energy": 0.1, "closed+no-energy": 0.4,
                             "open+no-energy": 0.25},
        },
        "actions": {
            "productive": {"voltage": 0.3, "plate-area": 0.3, "plate-separation": 0.3,
                           "other": 0.1},
            "unproductive": {"voltage": 0.3, "plate-area": 0.15, "plate-separation": 0.15,
                             "other": 0.4},
        },
        "components": {
            "voltage": ["batteryVoltageSlider", "voltageSlider"],
            "plate-area": ["plateAreaDragHandle"],
            "plate-separation": ["plateSeparationDragHandle"],
            "other": ["circuitSwitch", "energyCheckbox", "voltmeterProbe", "resetAllButton"],
        },
    },
}


def _beers_snapshot(state: str, rng) -> dict[str, str]:
    shown = "true"
    if state == "green-green":
        laser, solution = "green", "green"
    elif state == "green-red":
        laser, solution = "green", "red"
    elif state == "absorbance-displayed":
        if rng.random() < 0.5:
            laser = str(rng.choice(["red", "blue", "violet", "yellow"]))
            solution = str(rng.choice(["red", "green", "orange", "purple"]))
        else:
            laser, solution = "green", str(rng.choice(["orange", "yellow", "purple"]))
    else:
        shown = "false"
        laser = str(rng.choice(["green", "red", "blue"]))
        solution = str(rng.choice(["red", "green", "orange"]))
    return {
        "absorbanceShown": shown,
        "laser": laser,
        "solution": solution,
        "concentration": f"{rng.integers(1, 400)}",
        "width": f"{rng.integers(5, 21) / 10:.1f}",
    }


def _capacitor_snapshot(state: str, rng) -> dict[str, str]:
    circuit = "closed" if state.startswith("closed") else "open"
    energy = "true" if state.endswith("+energy") else "false"
    return {
        "circuit": circuit,
        "energyShown": energy,
        "voltage": f"{rng.integers(-15, 16) / 10:.1f}",
        "plateArea": f"{rng.integers(100, 401)}",
        "plateSeparation": f"{rng.integers(5, 11)}",
    }


SNAPSHOTS = {"beers_law": _beers_snapshot, "capacitor": _capacitor_snapshot}


@dataclass
class GeneratorConfig:
    schema: str = "beers_law"
    n_students: int = 254
    label1_rate: float = 0.44
    median_actions: float = 36.0
    actions_sigma: float = 0.45
    signal_strength: float = 0.8
    time_compensation: float = 0.0
    state_persistence: float = 0.5
    persistence_contrast: float = 0.3
    profile_contrast: float = 0.25
    action_median_s: float = 1.2
    break_median_s: float = 6.3
    break_sigma: float = 1.1
    groups: dict = field(default_factory=lambda: {"A": 0.7, "B": 0.3})
    group_noise: dict = field(default_factory=dict)
    seed: int = 0

    def validate(self):
        if self.schema not in PROFILES:
            raise InvalidConfig(f"no behaviour profile for schema {self.schema!r}")
        if self.n_students < 20:
            raise InvalidConfig("n_students must be at least 20")
        for name in ("label1_rate", "signal_strength", "state_persistence", "profile_contrast"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidConfig(f"{name} must lie in [0, 1], got {v}")
        if not self.groups or any(p < 0 for p in self.groups.values()):
            raise InvalidConfig("groups must be a non-empty mapping of non-negative weights")
        for g, v in self.group_noise.items():
            if g not in self.groups or not 0.0 <= v <= 1.0:
                raise InvalidConfig(f"bad group noise entry {g!r}: {v}")
        if self.median_actions < 1 or self.time_compensation < 0:
            raise InvalidConfig("median_actions must be >= 1 and time_compensation >= 0")


@dataclass
class Cohort:
    config: GeneratorConfig
    records: list[dict]
    labels: dict[str, int]
    rankings: dict[str, str]
    attributes: dict[str, dict[str, str]]
    emitted: dict[str, int]

    @property
    def student_ids(self) -> list[str]:
        return list(self.labels)

    def log_lines(self) -> list[str]:
        return [json.dumps(r, sort_keys=True) for r in self.records]

    def write(self, out_dir) -> None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "log.jsonl"), "w", encoding="utf-8", newline="\n") as fh:
            for line in self.log_lines():
                fh.write(line + "\n")
        with open(os.path.join(out_dir, "labels.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["student_id", "ranking", "label"])
            for sid in self.labels:
                w.writerow([sid, self.rankings[sid], self.labels[sid]])
        keys = sorted({k for a in self.attributes.values() for k in a})
        with open(os.path.join(out_dir, "attributes.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["student_id", *keys])
            for sid in self.labels:
                w.writerow([sid, *(self.attributes[sid].get(k, "") for k in keys)])


def _mix(profile: dict, neutral: np.ndarray, names: list[str], strength: float) -> np.ndarray:
    p = np.array([profile[n] for n in names], dtype=float)
    p /= p.sum()
    return strength * p + (1.0 - strength) * neutral


def _student(cfg: GeneratorConfig, idx: int, prof: dict, state_names, action_names, schema):
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, idx]))
    sid = f"s{idx:04d}"
    label = int(rng.random() < cfg.label1_rate)
    group_names = list(cfg.groups)
    gw = np.array([cfg.groups[g] for g in group_names], dtype=float)
    group = group_names[rng.choice(len(group_names), p=gw / gw.sum())]
    strength = cfg.signal_strength * (1.0 - cfg.group_noise.get(group, 0.0))
    key = "productive" if label == 1 else "unproductive"

    neutral_s = np.full(len(state_names), 1.0 / len(state_names))
    neutral_a = np.full(len(action_names), 1.0 / len(action_names))
    p_state = _mix(prof["states"][key], neutral_s, state_names, strength * cfg.profile_contrast)
    p_action = _mix(prof["actions"][key], neutral_a, action_names,
                    strength * cfg.profile_contrast)
    sign = 1.0 if label == 1 else -1.0
    persistence = min(max(cfg.state_persistence + sign * strength * cfg.persistence_contrast,
                          0.0), 1.0)
    stretch = (neutral_s / p_state) ** cfg.time_compensation
    stretch_a = (neutral_a / p_action) ** cfg.time_compensation

    n_actions = int(round(rng.lognormal(math.log(cfg.median_actions), cfg.actions_sigma)))
    n_actions = min(max(n_actions, 10), 400)
    snapshot = SNAPSHOTS[cfg.schema]
    state = rng.choice(len(state_names), p=p_state)
    t = 0
    records = []
    for k in range(n_actions):
        a = rng.choice(len(action_names), p=p_action)
        comps = prof["components"][action_names[a]]
        component = comps[rng.integers(len(comps))]
        records.append({"student_id": sid, "t_ms": t, "kind": "click", "component": component,
                        "state": snapshot(state_names[state], rng)})
        hold = rng.lognormal(math.log(cfg.action_median_s), 0.6) * stretch[state] * stretch_a[a]
        t += max(50, int(round(hold * 1000)))
        if rng.random() >= persistence:
            state = rng.choice(len(state_names), p=p_state)
        records.append({"student_id": sid, "t_ms": t, "kind": "release", "component": component,
                        "state": snapshot(state_names[state], rng)})
        if k < n_actions - 1:
            gap = rng.lognormal(math.log(cfg.break_median_s), cfg.break_sigma) * stretch[state]
            t += max(20, int(round(gap * 1000)))
    options = rankings_for_label(label, schema)
    ranking = options[rng.integers(len(options))]
    return sid, label, ranking, {"region": group}, records


def generate_cohort(cfg: GeneratorConfig) -> Cohort:
    """Simulate ``cfg.n_students`` students; deterministic in ``cfg.seed``."""
    cfg.validate()
    schema = builtin_schema(cfg.schema)
    prof = PROFILES[cfg.schema]
    state_names = schema.state_names
    action_names = [a.name for a in schema.actions if not (a.is_break)]
    records, labels, rankings, attributes, emitted = [], {}, {}, {}, {}
    for i in range(cfg.n_students):
        sid, label, ranking, attrs, recs = _student(cfg, i, prof, state_names, action_names,
                                                    schema)
        records.extend(recs)
        labels[sid] = label
        rankings[sid] = ranking
        attributes[sid] = attrs
        emitted[sid] = len(recs)
    return Cohort(cfg, records, labels, rankings, attributes, emitted)


def config_dict(cfg: GeneratorConfig) -> dict:
    return asdict(cfg)


def read_labels(path) -> dict[str, tuple[str, int]]:
    """``student_id -> (ranking, label)`` from a labels CSV."""
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out[row["student_id"]] = (row.get("ranking", ""), int(row["label"]))
    return out


def read_attributes(path) -> dict[str, dict[str, str]]:
    with open(path, newline="") as fh:
        return {row.pop("student_id"): row for row in csv.DictReader(fh)}
