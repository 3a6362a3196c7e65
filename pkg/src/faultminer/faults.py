"""Fault catalog, fault plans and runtime injection.

Fault types are enumerated straight from the variable registry: every
injectable variable crossed with the corruption rules its kind admits.
A plan binds one fault type to an injection window; the Injector is the
per-run hook that applies it between the producing and the consuming
module and keeps a record of every corruption.
"""
from __future__ import annotations

import json
import math
import re
import struct
from dataclasses import dataclass, field

import numpy as np

from faultminer.registry import get_spec, injectable_names

__all__ = [
    "FaultError",
    "FaultType",
    "FaultPlan",
    "CampaignConfig",
    "InjectionRecord",
    "Injector",
    "catalog",
    "numeric_targets",
    "fault_by_name",
    "make_plan",
    "bitflip",
    "plan_to_json",
    "plan_from_json",
]

FAULT_MODELS = ("OneFixed", "MFixed", "OneRandom", "MRandom", "BitFlip")
M_RANGE = (10, 100)   # window length for the M models, inclusive


class FaultError(ValueError):
    """Raised for ill-formed fault types, plans or configs."""


@dataclass(frozen=True)
class FaultType:
    """One corruption: a registry variable and the rule applied to it."""

    target: str
    rule: str
    category: str | None = None    # set_category only
    n_bits: int = 0                # bitflip only
    value: float | None = None     # set_value only

    def __post_init__(self) -> None:
        try:
            spec = get_spec(self.target)
        except KeyError:
            raise FaultError(f"unknown fault target {self.target!r}") from None
        if not spec.injectable:
            raise FaultError(f"{self.target} is not an injection site")
        kind = spec.kind
        ok = {
            "set_max": kind == "bounded",
            "set_min": kind == "bounded",
            "double": kind == "unbounded",
            "halve": kind == "unbounded",
            "set_category": kind == "categorical",
            "set_value": kind in ("bounded", "unbounded"),
            "bitflip": kind in ("bounded", "unbounded"),
        }.get(self.rule)
        if ok is None:
            raise FaultError(f"unknown corruption rule {self.rule!r}")
        if not ok:
            raise FaultError(f"rule {self.rule} does not apply to {kind} "
                             f"variable {self.target}")
        if self.rule == "set_category":
            if self.category not in (spec.categories or ()):
                raise FaultError(f"{self.target}: unknown category {self.category!r}")
        if self.rule == "bitflip" and self.n_bits not in (1, 2):
            raise FaultError("bitflip corrupts one or two bits")
        if self.rule == "set_value":
            if self.value is None or not math.isfinite(self.value):
                raise FaultError("set_value needs a finite value")

    @property
    def name(self) -> str:
        if self.rule == "set_category":
            return f"{self.target}:set_category({self.category})"
        if self.rule == "bitflip":
            return f"{self.target}:bitflip({self.n_bits})"
        if self.rule == "set_value":
            return f"{self.target}:set_value({self.value!r})"
        return f"{self.target}:{self.rule}"

    def apply(self, value, bit_positions=()):
        spec = get_spec(self.target)
        if self.rule == "set_max":
            return spec.bounds[1]
        if self.rule == "set_min":
            return spec.bounds[0]
        if self.rule == "double":
            return float(value) * 2.0
        if self.rule == "halve":
            return float(value) * 0.5
        if self.rule == "set_category":
            return self.category
        if self.rule == "set_value":
            v = float(self.value)
            if spec.kind == "bounded":
                v = min(max(v, spec.bounds[0]), spec.bounds[1])
            return v
        out = float(value)
        for pos in bit_positions:
            out = _flip_bit(out, int(pos))
        return out


_NAME_RE = re.compile(r"^(?P<target>[a-z_.]+):(?P<rule>[a-z_]+)"
                      r"(?:\((?P<arg>[^)]*)\))?$")


def fault_by_name(name: str) -> FaultType:
    m = _NAME_RE.match(name.strip())
    if not m:
        raise FaultError(f"cannot parse fault name {name!r}")
    target, rule, arg = m.group("target"), m.group("rule"), m.group("arg")
    if rule == "set_category":
        return FaultType(target, rule, category=arg)
    if rule == "bitflip":
        try:
            return FaultType(target, rule, n_bits=int(arg))
        except (TypeError, ValueError):
            raise FaultError(f"bitflip needs a bit count in {name!r}") from None
    if rule == "set_value":
        try:
            return FaultType(target, rule, value=float(arg))
        except (TypeError, ValueError):
            raise FaultError(f"set_value needs a number in {name!r}") from None
    if arg is not None:
        raise FaultError(f"rule {rule} takes no argument")
    return FaultType(target, rule)


def catalog() -> list[FaultType]:
    """Every variable crossed with the rules its kind admits.

    Bit-flips are a separate fault model drawn over numeric_targets(),
    not catalog members, so the count stays stable as the single-number
    summary of the stuck-at style corruption space.
    """
    out: list[FaultType] = []
    for name in injectable_names():
        spec = get_spec(name)
        if spec.kind == "bounded":
            out.append(FaultType(name, "set_max"))
            out.append(FaultType(name, "set_min"))
        elif spec.kind == "unbounded":
            out.append(FaultType(name, "double"))
            out.append(FaultType(name, "halve"))
        else:
            for c in spec.categories:
                out.append(FaultType(name, "set_category", category=c))
    return out


def numeric_targets() -> list[str]:
    """Injectable variables a bit-flip can hit."""
    return [n for n in injectable_names()
            if get_spec(n).kind in ("bounded", "unbounded")]


# bit flips -----------------------------------------------------------

def _flip_bit(value: float, pos: int) -> float:
    bits = int.from_bytes(struct.pack("<d", float(value)), "little")
    bits ^= 1 << pos
    return struct.unpack("<d", bits.to_bytes(8, "little"))[0]


def draw_bit_positions(n_bits: int, rng: np.random.Generator) -> tuple[int, ...]:
    return tuple(int(p) for p in rng.choice(64, size=n_bits, replace=False))


def bitflip(value: float, n_bits: int, seed: int) -> float:
    """Flip one or two distinct uniformly chosen bits of a binary64."""
    if n_bits not in (1, 2):
        raise FaultError("bitflip corrupts one or two bits")
    out = float(value)
    for pos in draw_bit_positions(n_bits, np.random.default_rng(seed)):
        out = _flip_bit(out, pos)
    return out


# plans ---------------------------------------------------------------

@dataclass(frozen=True)
class FaultPlan:
    model: str
    start: int
    duration: int
    fault: FaultType
    seed: int

    def __post_init__(self) -> None:
        if self.model not in FAULT_MODELS:
            raise FaultError(f"unknown fault model {self.model!r}")
        if self.start < 0:
            raise FaultError("start scene must be >= 0")
        if self.model in ("OneFixed", "OneRandom", "BitFlip"):
            if self.duration != 1:
                raise FaultError(f"{self.model} is a single-scene corruption")
        else:
            if not (M_RANGE[0] <= self.duration <= M_RANGE[1]):
                raise FaultError(
                    f"{self.model} window must lie in {M_RANGE}, "
                    f"got {self.duration}")

    def active(self, scene: int) -> bool:
        return self.start <= scene < self.start + self.duration


@dataclass(frozen=True)
class CampaignConfig:
    """What a fault campaign sweeps: one scenario, one model, many runs."""

    scenario_id: str
    model: str
    target: str = "random"    # fault-type name, variable name, or "random"
    experiments: int = 1
    seed: int = 0
    out_dir: str = "campaign_out"

    def __post_init__(self) -> None:
        if self.model not in FAULT_MODELS:
            raise FaultError(f"unknown fault model {self.model!r}")
        if self.experiments < 1:
            raise FaultError("experiments must be >= 1")


def _draw_random_fault(rng: np.random.Generator) -> FaultType:
    # target drawn uniformly over variables, then a value for it:
    # bounded picks a uniform in-range value, unbounded doubles or
    # halves, categorical picks a uniform category
    name = str(rng.choice(injectable_names()))
    spec = get_spec(name)
    if spec.kind == "bounded":
        lo, hi = spec.bounds
        return FaultType(name, "set_value", value=float(rng.uniform(lo, hi)))
    if spec.kind == "unbounded":
        return FaultType(name, "double" if rng.random() < 0.5 else "halve")
    return FaultType(name, "set_category",
                     category=str(rng.choice(spec.categories)))


def _resolve_fixed_target(target: str, rng: np.random.Generator) -> FaultType:
    if target == "random":
        types = catalog()
        return types[int(rng.integers(len(types)))]
    if ":" in target:
        return fault_by_name(target)
    # bare variable name: uniform over that variable's catalog entries
    mine = [t for t in catalog() if t.target == target]
    if not mine:
        raise FaultError(f"no catalog entries for target {target!r}")
    return mine[int(rng.integers(len(mine)))]


def make_plan(config: CampaignConfig, scene_count: int, seed: int) -> FaultPlan:
    """Draw one reproducible plan for an experiment of the campaign."""
    if scene_count <= M_RANGE[0]:
        raise FaultError(f"scenario too short for fault windows ({scene_count})")
    rng = np.random.default_rng(seed)
    model = config.model
    if model in ("MFixed", "MRandom"):
        m = int(rng.integers(M_RANGE[0], M_RANGE[1] + 1))
        m = min(m, scene_count - 1)
        start = int(rng.integers(0, scene_count - m + 1))
    else:
        m = 1
        start = int(rng.integers(0, scene_count))
    if model in ("OneFixed", "MFixed"):
        fault = _resolve_fixed_target(config.target, rng)
    elif model in ("OneRandom", "MRandom"):
        fault = _draw_random_fault(rng)
    else:
        if config.target not in ("random", ""):
            name = config.target.split(":")[0]
            if name not in numeric_targets():
                raise FaultError(f"bit-flips need a numeric target, got {name!r}")
        else:
            name = str(rng.choice(numeric_targets()))
        n_bits = 1 if rng.random() < 0.5 else 2
        fault = FaultType(name, "bitflip", n_bits=n_bits)
    return FaultPlan(model=model, start=start, duration=m, fault=fault, seed=seed)


def plan_to_json(plan: FaultPlan) -> str:
    return json.dumps({
        "model": plan.model, "start": plan.start, "duration": plan.duration,
        "fault": plan.fault.name, "seed": plan.seed,
    }, sort_keys=True)


def plan_from_json(text: str) -> FaultPlan:
    try:
        doc = json.loads(text)
        return FaultPlan(
            model=str(doc["model"]), start=int(doc["start"]),
            duration=int(doc["duration"]), fault=fault_by_name(doc["fault"]),
            seed=int(doc["seed"]),
        )
    except FaultError:
        raise
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise FaultError(f"bad fault plan document: {e}") from None


# runtime injection ---------------------------------------------------

@dataclass(frozen=True)
class InjectionRecord:
    scene: int
    variable: str
    old: object
    new: object

    def line(self) -> str:
        return f"{self.scene},{self.variable},{self.old},{self.new}"


class Injector:
    """Per-run hook: corrupts the plan's variable inside its window.

    Bit positions for a bitflip fault are drawn once from the plan seed
    so a replay flips the same bits.
    """

    def __init__(self, plan: FaultPlan):
        self.plan = plan
        self.records: list[InjectionRecord] = []
        self._bits: tuple[int, ...] = ()
        if plan.fault.rule == "bitflip":
            self._bits = draw_bit_positions(
                plan.fault.n_bits, np.random.default_rng(plan.seed))

    def __call__(self, scene: int, name: str, value):
        if name != self.plan.fault.target or not self.plan.active(scene):
            return value
        new = self.plan.fault.apply(value, self._bits)
        self.records.append(InjectionRecord(scene, name, value, new))
        return new

    def log_lines(self) -> list[str]:
        return [r.line() for r in self.records]
