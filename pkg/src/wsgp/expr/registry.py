"""Operator registry for the alpha DSL.

The registry is plain data: each operator declares its slot kinds (data or
window) and an evaluation family. Kernels live in :mod:`wsgp.evaluator` and
are looked up by name, so a config file can add aliases of existing kernels
without touching code.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable

import yaml


class SlotKind(str, Enum):
    DATA = "data"
    WINDOW = "window"


class OpFamily(str, Enum):
    ELEMENTWISE = "elementwise"
    CROSS_SECTIONAL = "cross_sectional"
    TIME_SERIES = "time_series"


@dataclass(frozen=True)
class OperatorSpec:
    """Declaration of one DSL operator.

    Attributes:
        name: Identifier used in expression text.
        slot_kinds: Kind of each positional argument.
        family: How the evaluator applies the kernel (per cell, per date,
            or per stock over a trailing window).
        kernel: Name of the evaluation kernel; defaults to ``name``.
        description: Free text.
    """

    name: str
    slot_kinds: tuple[SlotKind, ...]
    family: OpFamily
    kernel: str = ""
    description: str = ""
    output_kind: SlotKind = SlotKind.DATA

    def __post_init__(self):
        if not self.name.isidentifier():
            raise ValueError(f"operator name {self.name!r} is not an identifier")
        if len(self.slot_kinds) < 1:
            raise ValueError(f"operator {self.name!r} needs at least one slot")
        if SlotKind.DATA not in self.slot_kinds:
            raise ValueError(f"operator {self.name!r} takes only windows")
        if self.output_kind is not SlotKind.DATA:
            raise ValueError(f"operator {self.name!r} must produce data")
        if (SlotKind.WINDOW in self.slot_kinds) != (self.family is OpFamily.TIME_SERIES):
            raise ValueError(
                f"operator {self.name!r}: window slots are allowed exactly for time-series operators"
            )
        if not self.kernel:
            object.__setattr__(self, "kernel", self.name)

    @property
    def arity(self) -> int:
        return len(self.slot_kinds)


_D, _W = SlotKind.DATA, SlotKind.WINDOW
_EW, _CS, _TS = OpFamily.ELEMENTWISE, OpFamily.CROSS_SECTIONAL, OpFamily.TIME_SERIES

DEFAULT_OPERATORS: tuple[OperatorSpec, ...] = (
    OperatorSpec("add", (_D, _D), _EW, description="x + y"),
    OperatorSpec("sub", (_D, _D), _EW, description="x - y"),
    OperatorSpec("mul", (_D, _D), _EW, description="x * y"),
    OperatorSpec("div", (_D, _D), _EW, description="x / y, missing when |y| < 1e-12"),
    OperatorSpec("abs", (_D,), _EW, description="|x|"),
    OperatorSpec("log", (_D,), _EW, description="ln x, missing when x <= 0"),
    OperatorSpec("sign", (_D,), _EW, description="sign of x"),
    OperatorSpec("neg", (_D,), _EW, description="-x"),
    OperatorSpec("rank", (_D,), _CS, description="cross-sectional rank scaled to [0, 1]"),
    OperatorSpec("scale", (_D,), _CS, description="x / sum(|x|) per date"),
    OperatorSpec("ts_mean", (_D, _W), _TS, description="trailing mean"),
    OperatorSpec("ts_std", (_D, _W), _TS, description="trailing sample std"),
    OperatorSpec("ts_min", (_D, _W), _TS, description="trailing min"),
    OperatorSpec("ts_max", (_D, _W), _TS, description="trailing max"),
    OperatorSpec("ts_sum", (_D, _W), _TS, description="trailing sum"),
    OperatorSpec("ts_rank", (_D, _W), _TS, description="rank of today within the window, in [0, 1]"),
    OperatorSpec("ts_argmax", (_D, _W), _TS, description="1-based position of the window max, oldest = 1"),
    OperatorSpec("ts_argmin", (_D, _W), _TS, description="1-based position of the window min, oldest = 1"),
    OperatorSpec("delay", (_D, _W), _TS, description="value d days ago"),
    OperatorSpec("delta", (_D, _W), _TS, description="x - delay(x, d)"),
    OperatorSpec("decay_linear", (_D, _W), _TS, description="linearly weighted mean, newest weight d"),
    OperatorSpec("ts_corr", (_D, _D, _W), _TS, description="trailing Pearson correlation"),
    OperatorSpec("ts_cov", (_D, _D, _W), _TS, description="trailing sample covariance"),
)

DEFAULT_FIELDS: tuple[str, ...] = (
    "open", "high", "low", "close", "vwap", "volume", "turnover", "returns",
)


@dataclass(frozen=True)
class Registry:
    """Immutable set of operators, fields and window bounds.

    Operators are grouped into classes by slot-kind signature; point
    mutation and same-structure sampling draw from these classes.
    """

    operators: tuple[OperatorSpec, ...] = DEFAULT_OPERATORS
    fields: tuple[str, ...] = DEFAULT_FIELDS
    min_window: int = 2
    max_window: int = 60
    max_depth: int = 8
    _by_name: dict = field(init=False, repr=False, compare=False)
    _classes: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        by_name: dict[str, OperatorSpec] = {}
        for spec in self.operators:
            if spec.name in by_name:
                raise ValueError(f"duplicate operator {spec.name!r}")
            by_name[spec.name] = spec
        if len(set(self.fields)) != len(self.fields):
            raise ValueError("duplicate field names")
        overlap = set(self.fields) & set(by_name)
        if overlap:
            raise ValueError(f"names used both as field and operator: {sorted(overlap)}")
        if not 1 <= self.min_window <= self.max_window:
            raise ValueError("invalid window bounds")
        classes: dict[tuple[SlotKind, ...], tuple[str, ...]] = {}
        for spec in self.operators:
            classes[spec.slot_kinds] = classes.get(spec.slot_kinds, ()) + (spec.name,)
        object.__setattr__(self, "_by_name", by_name)
        object.__setattr__(self, "_classes", classes)

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def get(self, name: str) -> OperatorSpec:
        return self._by_name[name]

    def peers(self, name: str) -> tuple[str, ...]:
        """Operators sharing ``name``'s slot kinds, ``name`` included."""
        return self._classes[self._by_name[name].slot_kinds]

    @property
    def windows(self) -> range:
        return range(self.min_window, self.max_window + 1)

    def with_fields(self, fields: Iterable[str]) -> "Registry":
        return Registry(self.operators, tuple(fields), self.min_window, self.max_window, self.max_depth)

    @classmethod
    def from_dict(cls, data: dict, base: "Registry | None" = None) -> "Registry":
        """Build a registry from a mapping.

        Recognised keys: ``operators`` (list of ``{name, slots, family,
        kernel?, description?}``), ``fields``, ``min_window``, ``max_window``,
        ``max_depth`` and ``extend`` (keep ``base`` operators and append).
        """
        base = base or DEFAULT_REGISTRY
        ops = list(base.operators) if data.get("extend", False) else []
        for item in data.get("operators", []):
            ops.append(
                OperatorSpec(
                    name=item["name"],
                    slot_kinds=tuple(SlotKind(s) for s in item["slots"]),
                    family=OpFamily(item["family"]),
                    kernel=item.get("kernel", ""),
                    description=item.get("description", ""),
                )
            )
        if not ops:
            ops = list(base.operators)
        return cls(
            operators=tuple(ops),
            fields=tuple(data.get("fields", base.fields)),
            min_window=int(data.get("min_window", base.min_window)),
            max_window=int(data.get("max_window", base.max_window)),
            max_depth=int(data.get("max_depth", base.max_depth)),
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "Registry":
        text = Path(path).read_text()
        if str(path).endswith(".json"):
            data = json.loads(text)
        else:
            data = yaml.safe_load(text)
        return cls.from_dict(data or {})


DEFAULT_REGISTRY = Registry()
