"""Network description and the columnar case-file format.

A case file is UTF-8 text with three sections introduced by a header line
(``BUS``, ``BRANCH``, ``GEN``) and optional ``BASE_MVA`` / ``NAME`` lines.
``#`` starts a comment. Columns, whitespace separated:

    BUS     id  kind  load_p  load_q  shunt_b  [v_min  v_max]
    BRANCH  from  to  r  x  b_charging  s_lim  [ratio  [in_service]]
    GEN     bus  p_set  q_min  q_max  v_set  [in_service]

``kind`` is one of ``slack``, ``pv``, ``pq``. Loads are MW/MVAr, ``s_lim`` is
MVA, ``p_set``/``q_min``/``q_max`` are MW/MVAr, everything else is per-unit
on ``BASE_MVA``. ``ratio`` is a fixed off-nominal transformer ratio on the
from side (1 for lines). Omitted voltage limits default to 0.95/1.05.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources

DEFAULT_V_MIN = 0.95
DEFAULT_V_MAX = 1.05

BUS_KINDS = ("slack", "pv", "pq")


class CaseFormatError(ValueError):
    """Raised when a case file cannot be parsed or fails validation."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class Bus:
    id: int
    kind: str
    base_load_p: float
    base_load_q: float
    shunt_b: float = 0.0
    v_min: float = DEFAULT_V_MIN
    v_max: float = DEFAULT_V_MAX


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_charging: float
    s_lim: float
    ratio: float = 1.0
    in_service: bool = True

    @property
    def name(self) -> str:
        return f"{self.from_bus}_{self.to_bus}"


@dataclass(frozen=True)
class Generator:
    bus: int
    p_set: float
    q_min: float
    q_max: float
    v_set: float
    in_service: bool = True


@dataclass(frozen=True)
class Outage:
    """Single-element outage. ``element_id`` indexes ``case.branches`` or
    ``case.generators`` depending on ``kind``."""

    kind: str = "none"
    element_id: int | None = None

    def __post_init__(self):
        if self.kind not in ("none", "line", "generator"):
            raise ValueError(f"unknown outage kind {self.kind!r}")
        if (self.kind == "none") != (self.element_id is None):
            raise ValueError("element_id must be given iff kind != 'none'")

    def label(self) -> str:
        return "none" if self.kind == "none" else f"{self.kind}:{self.element_id}"

    @classmethod
    def from_label(cls, text: str) -> "Outage":
        if text == "none":
            return cls()
        kind, _, idx = text.partition(":")
        return cls(kind, int(idx))


NO_OUTAGE = Outage()


@dataclass(frozen=True)
class NetworkCase:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    base_mva: float = 100.0
    name: str = "case"
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))
        object.__setattr__(self, "generators", tuple(self.generators))
        object.__setattr__(self, "_index", {b.id: i for i, b in enumerate(self.buses)})

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @property
    def n_branches(self) -> int:
        return len(self.branches)

    def bus_index(self, bus_id: int) -> int:
        """Position of ``bus_id`` in ``buses``."""
        return self._index[bus_id]

    @property
    def slack_index(self) -> int:
        return next(i for i, b in enumerate(self.buses) if b.kind == "slack")


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    def __bool__(self) -> bool:
        return not self.violations

    def __len__(self) -> int:
        return len(self.violations)

    def add(self, msg: str) -> None:
        self.violations.append(msg)


def validate(case: NetworkCase) -> ValidationReport:
    """Collect every invariant violation of ``case``; never raises."""
    rep = ValidationReport()
    seen = set()
    for b in case.buses:
        if b.id in seen:
            rep.add(f"duplicate bus id {b.id}")
        seen.add(b.id)
        if b.kind not in BUS_KINDS:
            rep.add(f"bus {b.id}: unknown kind {b.kind!r}")
        if not (0 < b.v_min < b.v_max):
            rep.add(f"bus {b.id}: voltage limits must satisfy 0 < v_min < v_max "
                    f"(got {b.v_min}, {b.v_max})")
    n_slack = sum(b.kind == "slack" for b in case.buses)
    if n_slack != 1:
        rep.add(f"expected exactly one slack bus, found {n_slack}")
    for k, br in enumerate(case.branches):
        for end in (br.from_bus, br.to_bus):
            if end not in seen:
                rep.add(f"branch {k}: dangling reference to bus {end}")
        if br.from_bus == br.to_bus:
            rep.add(f"branch {k}: from_bus equals to_bus ({br.from_bus})")
        if br.x == 0:
            rep.add(f"branch {k}: zero reactance")
        if not br.s_lim > 0:
            rep.add(f"branch {k}: s_lim must be positive")
        if not br.ratio > 0:
            rep.add(f"branch {k}: ratio must be positive")
    for k, g in enumerate(case.generators):
        if g.bus not in seen:
            rep.add(f"generator {k}: dangling reference to bus {g.bus}")
        if g.q_min > g.q_max:
            rep.add(f"generator {k}: q_min > q_max")
    if case.buses and not rep.violations:
        if not is_connected(case):
            rep.add("network is not connected with all branches in service")
    return rep


def is_connected(case: NetworkCase, removed_branch: int | None = None) -> bool:
    """True when every bus is reachable from the slack over in-service
    branches, optionally with one extra branch removed."""
    adj: dict[int, list[int]] = {b.id: [] for b in case.buses}
    for k, br in enumerate(case.branches):
        if not br.in_service or k == removed_branch:
            continue
        adj[br.from_bus].append(br.to_bus)
        adj[br.to_bus].append(br.from_bus)
    start = case.buses[case.slack_index].id
    seen = {start}
    stack = [start]
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    return len(seen) == len(adj)


def _bool(tok: str, lineno: int) -> bool:
    if tok in ("1", "true", "True"):
        return True
    if tok in ("0", "false", "False"):
        return False
    raise CaseFormatError(f"expected 0/1 flag, got {tok!r}", lineno)


def parse_case(text: str, name: str = "case") -> NetworkCase:
    """Parse case-file ``text`` and return a validated :class:`NetworkCase`.

    Raises :class:`CaseFormatError` on syntax errors (with line number), on
    duplicate bus ids, dangling bus references and zero-reactance branches.
    """
    section = None
    base_mva = 100.0
    buses, branches, gens = [], [], []
    bus_lines: dict[int, int] = {}
    ref_lines: list[tuple[int, int]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        head = toks[0].upper()
        if head in ("BUS", "BRANCH", "GEN") and len(toks) == 1:
            section = head
            continue
        if head == "BASE_MVA":
            base_mva = _float(toks, 1, lineno)
            continue
        if head == "NAME":
            name = " ".join(toks[1:])
            continue
        if section is None:
            raise CaseFormatError(f"data row outside of a section: {line!r}", lineno)
        try:
            if section == "BUS":
                if len(toks) not in (5, 7):
                    raise CaseFormatError(f"BUS row needs 5 or 7 columns, got {len(toks)}", lineno)
                kind = toks[1].lower()
                if kind not in BUS_KINDS:
                    raise CaseFormatError(f"unknown bus kind {toks[1]!r}", lineno)
                vals = [float(t) for t in toks[2:]]
                bus = Bus(int(toks[0]), kind, *vals)
                if bus.id in bus_lines:
                    raise CaseFormatError(f"duplicate bus id {bus.id}", lineno)
                bus_lines[bus.id] = lineno
                buses.append(bus)
            elif section == "BRANCH":
                if len(toks) not in (6, 7, 8):
                    raise CaseFormatError(f"BRANCH row needs 6-8 columns, got {len(toks)}", lineno)
                f, t = int(toks[0]), int(toks[1])
                r, x, b, s_lim = (float(v) for v in toks[2:6])
                ratio = float(toks[6]) if len(toks) > 6 else 1.0
                status = _bool(toks[7], lineno) if len(toks) > 7 else True
                if x == 0:
                    raise CaseFormatError(f"zero-reactance branch {f}-{t}", lineno)
                branches.append(Branch(f, t, r, x, b, s_lim, ratio, status))
                ref_lines += [(f, lineno), (t, lineno)]
            else:
                if len(toks) not in (5, 6):
                    raise CaseFormatError(f"GEN row needs 5 or 6 columns, got {len(toks)}", lineno)
                bus_id = int(toks[0])
                p, qmin, qmax, vset = (float(v) for v in toks[1:5])
                status = _bool(toks[5], lineno) if len(toks) > 5 else True
                gens.append(Generator(bus_id, p, qmin, qmax, vset, status))
                ref_lines.append((bus_id, lineno))
        except ValueError as exc:
            if isinstance(exc, CaseFormatError):
                raise
            raise CaseFormatError(str(exc), lineno) from None
    for bus_id, lineno in ref_lines:
        if bus_id not in bus_lines:
            raise CaseFormatError(f"dangling reference to bus {bus_id}", lineno)
    case = NetworkCase(tuple(buses), tuple(branches), tuple(gens), base_mva, name)
    report = validate(case)
    if not report:
        raise CaseFormatError("; ".join(report.violations))
    return case


def _float(toks, i, lineno):
    try:
        return float(toks[i])
    except (IndexError, ValueError):
        raise CaseFormatError("expected a number", lineno) from None


def format_case(case: NetworkCase) -> str:
    """Serialize ``case`` in the columnar format; ``parse_case`` inverts it."""
    out = [f"NAME {case.name}", f"BASE_MVA {case.base_mva!r}", "BUS",
           "# id kind load_p load_q shunt_b v_min v_max"]
    for b in case.buses:
        out.append(f"{b.id} {b.kind} {b.base_load_p!r} {b.base_load_q!r} {b.shunt_b!r} "
                   f"{b.v_min!r} {b.v_max!r}")
    out += ["BRANCH", "# from to r x b_charging s_lim ratio in_service"]
    for br in case.branches:
        out.append(f"{br.from_bus} {br.to_bus} {br.r!r} {br.x!r} {br.b_charging!r} "
                   f"{br.s_lim!r} {br.ratio!r} {int(br.in_service)}")
    out += ["GEN", "# bus p_set q_min q_max v_set in_service"]
    for g in case.generators:
        out.append(f"{g.bus} {g.p_set!r} {g.q_min!r} {g.q_max!r} {g.v_set!r} {int(g.in_service)}")
    return "\n".join(out) + "\n"


EMBEDDED_CASES = ("ieee118", "two_bus", "three_bus")


def load_case(name_or_path: str) -> NetworkCase:
    """Load an embedded case by name or a case file by path."""
    if name_or_path in EMBEDDED_CASES:
        text = resources.files("powersec.data").joinpath(f"{name_or_path}.case").read_text("utf-8")
        return parse_case(text, name=name_or_path)
    with open(name_or_path, encoding="utf-8") as fh:
        return parse_case(fh.read(), name=str(name_or_path))
