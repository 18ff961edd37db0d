"""Variable lists: the declarative description of a simulation study.

A study is described by an ordered list of variables.  Each variable has a
role:

* ``"N"``     -- the replication count (at most one such variable; its single
                 positive-integer value is the number of replications).
* ``"frozen"``-- a constant handed to the study function verbatim (weights,
                 auxiliary functions, ...).  Frozen variables do not create
                 dimensions.
* ``"grid"``  -- the variable's levels span the physical grid; the study runs
                 once per combination of grid levels (times replications).
* ``"inner"`` -- all levels are handled inside a single study-function call,
                 which returns one value per level (vectorized dimension).

The physical grid is the cartesian product of the grid variables' levels, with
the first-declared grid variable varying fastest.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

VTYPES = ("N", "frozen", "grid", "inner")


def format_levels(values) -> tuple[str, ...]:
    """Render levels as display strings.

    Numeric level sets are formatted with a common number of decimals (the
    maximum needed by any level's shortest round-trip form), e.g.
    ``[0.25, 0.5] -> "0.25", "0.50"`` and ``[64, 256] -> "64", "256"``.
    String levels pass through unchanged.
    """
    if all(isinstance(v, str) for v in values):
        return tuple(values)
    if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in values):
        if all(float(v).is_integer() and math.isfinite(v) for v in values):
            return tuple(str(int(v)) for v in values)
        reprs = [repr(float(v)) for v in values]
        if any(("e" in r or "E" in r or not math.isfinite(v)) for r, v in zip(reprs, values)):
            return tuple(reprs)
        ndec = max(len(r.split(".")[1]) for r in reprs)
        return tuple(f"{float(v):.{ndec}f}" for v in values)
    # mixed types: format each level on its own
    return tuple(_scalar_label(v) for v in values)


def _scalar_label(v) -> str:
    if isinstance(v, bool):
        return str(v)
    if isinstance(v, (int, float)):
        if float(v).is_integer() and math.isfinite(v):
            return str(int(v))
        return repr(float(v))
    if callable(v):
        return getattr(v, "__name__", repr(v))
    return str(v)


def payload_display(payload) -> str:
    """Display string for a frozen payload.

    Mapping entries show their value when numeric, otherwise their key;
    sequences show each element; callables show their name.
    """
    if isinstance(payload, dict):
        parts = []
        for k, v in payload.items():
            if isinstance(v, (int, float)) and not isinstance(v, bool):
                parts.append(_scalar_label(v))
            else:
                parts.append(str(k))
        return ", ".join(parts)
    if isinstance(payload, (list, tuple)):
        return ", ".join(_scalar_label(v) for v in payload)
    return _scalar_label(payload)


@dataclass(frozen=True)
class VarSpec:
    """One study variable.

    ``label`` is the display label used in tables and plots.  A label wrapped
    in ``$...$`` is treated as math by the LaTeX emitters; the default label is
    the math form of the variable's name.
    """

    name: str
    vtype: str
    values: tuple = ()
    label: str | None = None

    def __init__(self, name, vtype, values=(), label=None):
        object.__setattr__(self, "name", name)
        object.__setattr__(self, "vtype", vtype)
        if vtype == "frozen":
            vals = (values,)  # the payload, verbatim
        elif vtype == "N":
            vals = (values,) if isinstance(values, int) else tuple(values)
        else:
            vals = tuple(values)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "label", label if label is not None else f"${name}$")

    @property
    def payload(self):
        """The frozen payload (first value)."""
        return self.values[0]

    def level_labels(self) -> tuple[str, ...]:
        if self.vtype == "frozen":
            return (payload_display(self.values[0]),)
        return format_levels(self.values)

    def value_display(self) -> str:
        """Comma-joined rendering of the variable's value(s) for summaries."""
        return ", ".join(self.level_labels())


class VarList:
    """Ordered collection of :class:`VarSpec`, addressable by name."""

    def __init__(self, specs):
        self.specs: list[VarSpec] = list(specs)
        self._by_name = {s.name: s for s in self.specs}

    def __iter__(self):
        return iter(self.specs)

    def __len__(self):
        return len(self.specs)

    def __getitem__(self, name: str) -> VarSpec:
        return self._by_name[name]

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    @property
    def n_sim(self) -> int:
        """Replication count: the N variable's value, 1 when absent."""
        for s in self.specs:
            if s.vtype == "N":
                return int(s.values[0])
        return 1

    @property
    def n_sim_name(self) -> str:
        for s in self.specs:
            if s.vtype == "N":
                return s.name
        return "n.sim"

    def names(self, vtype: str | None = None) -> list[str]:
        return [s.name for s in self.specs if vtype is None or s.vtype == vtype]

    def get_el(self, vtype: str | None = None) -> dict:
        """Mapping name -> values, preserving declaration order."""
        return {s.name: s.values for s in self.specs if vtype is None or s.vtype == vtype}

    def validate(self) -> list[str]:
        """Return a list of problems; empty means the list is well formed."""
        problems = []
        seen = set()
        n_count = 0
        for s in self.specs:
            if not s.name or not isinstance(s.name, str):
                problems.append(f"variable with empty or non-string name: {s!r}")
                continue
            if s.name in seen:
                problems.append(f"duplicate variable name: {s.name!r}")
            seen.add(s.name)
            if s.vtype not in VTYPES:
                problems.append(f"{s.name}: unknown type {s.vtype!r}")
                continue
            if s.vtype == "N":
                n_count += 1
                if len(s.values) != 1 or not isinstance(s.values[0], int) \
                        or isinstance(s.values[0], bool) or s.values[0] < 1:
                    problems.append(f"{s.name}: replication count must be one positive integer")
            elif s.vtype in ("grid", "inner"):
                if len(s.values) < 1:
                    problems.append(f"{s.name}: needs at least one level")
                else:
                    labels = s.level_labels()
                    if len(set(labels)) != len(labels):
                        problems.append(f"{s.name}: level display strings not distinct: {labels}")
        if n_count > 1:
            problems.append("more than one replication-count variable")
        return problems

    def with_n_sim(self, n_sim: int) -> "VarList":
        """Copy of this list with the replication count replaced (or added)."""
        specs = []
        replaced = False
        for s in self.specs:
            if s.vtype == "N":
                specs.append(VarSpec(s.name, "N", n_sim, label=s.label))
                replaced = True
            else:
                specs.append(s)
        if not replaced:
            specs.insert(0, VarSpec("n.sim", "N", n_sim, label="$N_{sim}$"))
        return VarList(specs)

    def canonical(self) -> dict:
        """JSON-ready canonical form (used for persistence and fingerprints)."""
        variables = []
        for s in self.specs:
            if s.vtype == "frozen":
                value = s.values[0] if _jsonable(s.values[0]) else payload_display(s.values[0])
            elif s.vtype == "N":
                value = int(s.values[0])
            else:
                value = list(s.values)
            variables.append({"name": s.name, "type": s.vtype, "label": s.label, "value": value})
        return {"n_sim": self.n_sim, "variables": variables}

    @classmethod
    def from_canonical(cls, doc: dict) -> "VarList":
        specs = []
        for v in doc["variables"]:
            specs.append(VarSpec(v["name"], v["type"], v["value"], label=v.get("label")))
        vl = cls(specs)
        problems = vl.validate()
        if problems:
            raise ValueError("invalid variable list: " + "; ".join(problems))
        return vl


def _jsonable(obj) -> bool:
    try:
        json.dumps(obj)
        return True
    except (TypeError, ValueError):
        return False


@dataclass(frozen=True)
class PhysicalGrid:
    """Cartesian product of the grid variables' levels.

    Row ``r`` decodes with the first-declared grid variable varying fastest
    (odometer order, leftmost fastest).
    """

    var_names: tuple[str, ...]
    level_values: tuple[tuple, ...]   # per variable
    level_labels: tuple[tuple[str, ...], ...]
    sizes: tuple[int, ...] = field(init=False)
    n_rows: int = field(init=False)

    def __post_init__(self):
        sizes = tuple(len(v) for v in self.level_values)
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "n_rows", math.prod(sizes) if sizes else 1)

    def decode(self, row: int) -> tuple[int, ...]:
        """Row number -> tuple of level indices (first variable fastest)."""
        if not 0 <= row < self.n_rows:
            raise IndexError(f"grid row {row} out of range [0, {self.n_rows})")
        idx = []
        for size in self.sizes:
            idx.append(row % size)
            row //= size
        return tuple(idx)

    def encode(self, indices) -> int:
        row = 0
        for size, i in zip(reversed(self.sizes), reversed(tuple(indices))):
            if not 0 <= i < size:
                raise IndexError(f"level index {i} out of range [0, {size})")
            row = row * size + i
        return row

    def row_values(self, row: int) -> tuple:
        return tuple(vals[i] for vals, i in zip(self.level_values, self.decode(row)))

    def row_labels(self, row: int) -> tuple[str, ...]:
        return tuple(labs[i] for labs, i in zip(self.level_labels, self.decode(row)))

    def row_params(self, row: int) -> dict:
        return dict(zip(self.var_names, self.row_values(row)))


def mk_grid(vl: VarList) -> PhysicalGrid:
    """Build the physical grid of a variable list."""
    grid_specs = [s for s in vl.specs if s.vtype == "grid"]
    return PhysicalGrid(
        var_names=tuple(s.name for s in grid_specs),
        level_values=tuple(s.values for s in grid_specs),
        level_labels=tuple(s.level_labels() for s in grid_specs),
    )


def result_dims(vl: VarList) -> list[tuple[str, tuple[str, ...]]]:
    """Dimensions of the study's full value array.

    Inner variables first (declaration order), then grid variables
    (declaration order), then the replication dimension when n_sim > 1,
    labeled "1".."n_sim".
    """
    dims = [(s.name, s.level_labels()) for s in vl.specs if s.vtype == "inner"]
    dims += [(s.name, s.level_labels()) for s in vl.specs if s.vtype == "grid"]
    if vl.n_sim > 1:
        dims.append((vl.n_sim_name, tuple(str(i) for i in range(1, vl.n_sim + 1))))
    return dims


def non_grid_args(vl: VarList) -> dict:
    """Arguments common to every sub-job: frozen payloads and inner levels.

    Inner variables pass their complete level list; frozen variables pass
    their payload verbatim.
    """
    args = {}
    for s in vl.specs:
        if s.vtype == "frozen":
            args[s.name] = s.values[0]
        elif s.vtype == "inner":
            args[s.name] = list(s.values)
    return args
