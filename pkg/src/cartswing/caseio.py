"""Case-file and disturbance-script parsing.

Case schema (versioned structured text, ``case-format 1``)::

    case-format 1
    base-mva 100.0
    com-threshold 0.129        # optional, rad

    [buses]
    # id  type(slack|pv|pq)  gsh  bsh  vset
    1  slack  0.0  0.0  1.040

    [branches]
    # from  to  g  b  bsh  status      (series admittance g+jb p.u.,
    4  5  1.365188 -11.604096 0.176 1   total line-charging susceptance bsh)

    [generators]
    # bus  M  D  g  b  E  pmech        (machine link admittance g+jb p.u.)
    1  2.364  0.0254  0.0  -16.45  1.057  0.716

    [loads]
    # bus  category  key=value ...
    5  impedance  p=1.25 q=0.50

Load categories: ``induction`` (machine-equivalent, consumes ``p``),
``freq`` (rate ``m``, constant part ``d0``, optional ``mref``/``linkb``/``linkg``),
``impedance`` / ``current`` (fixed at the operating voltage), and ``power``
(left nonlinear, linearized about the operating voltage).

Disturbance script (``dist-format 1``): one ``<time> <kind> key=value ...``
record per line; kinds are ``load-scale``, ``fault``, ``line-open`` and
``clear-fault``.

All quantities are per-unit on ``base-mva``; angles in rad, times in s.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .errors import CaseParseError, CaseValidationError

CASE_FORMAT = 1
DIST_FORMAT = 1

BUS_KINDS = ("slack", "pv", "pq")
LOAD_CATEGORIES = ("induction", "freq", "impedance", "current", "power")
DISTURBANCE_KINDS = ("load-scale", "fault", "line-open", "clear-fault")


@dataclass(frozen=True)
class BusSpec:
    id: str
    kind: str            # slack | pv | pq
    gsh: float           # bus shunt admittance, p.u.
    bsh: float
    vset: float          # voltage setpoint magnitude, p.u.


@dataclass(frozen=True)
class BranchSpec:
    from_bus: str
    to_bus: str
    g: float             # series conductance, p.u.
    b: float             # series susceptance, p.u.
    bsh: float           # total line-charging susceptance, p.u.
    status: int = 1

    @property
    def y(self) -> complex:
        return complex(self.g, self.b)


@dataclass(frozen=True)
class GeneratorSpec:
    bus: str
    m: float             # rotor inertia, s^2/rad p.u.
    d: float             # damping, p.u.
    g: float             # machine link conductance, p.u.
    b: float             # machine link susceptance, p.u.
    e: float             # internal voltage magnitude setpoint, p.u.
    pmech: float         # mechanical power input, p.u.

    @property
    def link_y(self) -> complex:
        return complex(self.g, self.b)


@dataclass(frozen=True)
class LoadSpec:
    bus: str
    category: str
    params: tuple        # sorted (key, value) pairs

    def param(self, key, default=None):
        for k, v in self.params:
            if k == key:
                return v
        return default


@dataclass(frozen=True)
class RawCase:
    base_mva: float
    buses: tuple
    branches: tuple
    generators: tuple
    loads: tuple
    com_threshold: float | None = None

    def bus_ids(self):
        return [b.id for b in self.buses]

    def bus(self, bus_id) -> BusSpec:
        for b in self.buses:
            if b.id == bus_id:
                return b
        raise KeyError(bus_id)


@dataclass(frozen=True)
class Disturbance:
    """One scripted event.

    kind: load-scale(bus, factor) | fault(bus, y) | line-open(from, to)
          | clear-fault(bus)
    """
    kind: str
    time: float
    bus: str | None = None
    factor: float | None = None
    fault_y: complex | None = None
    from_bus: str | None = None
    to_bus: str | None = None


def _tokens(text):
    """Yield (lineno, tokens) for non-empty, non-comment lines."""
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if body:
            yield lineno, body.split()


def _num(tok, path, lineno, what):
    try:
        return float(tok)
    except ValueError:
        raise CaseParseError(f"expected a number for {what}, got {tok!r}",
                             path, lineno) from None


def _kv(tok, path, lineno):
    if "=" not in tok:
        raise CaseParseError(f"expected key=value, got {tok!r}", path, lineno)
    k, v = tok.split("=", 1)
    return k, v


def parse_case(text: str, path: str = "<case>") -> RawCase:
    """Parse case-file content into a validated :class:`RawCase`."""
    base_mva = None
    com_threshold = None
    buses, branches, generators, loads = [], [], [], []
    section = None
    seen_format = False

    for lineno, toks in _tokens(text):
        head = toks[0].lower()
        if head == "case-format":
            version = int(_num(toks[1], path, lineno, "case-format"))
            if version != CASE_FORMAT:
                raise CaseParseError(f"unsupported case-format {version}",
                                     path, lineno)
            seen_format = True
            continue
        if head == "base-mva":
            base_mva = _num(toks[1], path, lineno, "base-mva")
            continue
        if head == "com-threshold":
            com_threshold = _num(toks[1], path, lineno, "com-threshold")
            continue
        if head.startswith("["):
            section = head.strip("[]")
            if section not in ("buses", "branches", "generators", "loads"):
                raise CaseParseError(f"unknown section [{section}]", path, lineno)
            continue
        if section is None:
            raise CaseParseError(f"record outside any section: {toks[0]!r}",
                                 path, lineno)

        if section == "buses":
            if len(toks) != 5:
                raise CaseParseError("bus record needs: id type gsh bsh vset",
                                     path, lineno)
            kind = toks[1].lower()
            if kind not in BUS_KINDS:
                raise CaseParseError(f"unknown bus type {toks[1]!r}", path, lineno)
            buses.append(BusSpec(toks[0], kind,
                                 _num(toks[2], path, lineno, "gsh"),
                                 _num(toks[3], path, lineno, "bsh"),
                                 _num(toks[4], path, lineno, "vset")))
        elif section == "branches":
            if len(toks) != 6:
                raise CaseParseError("branch record needs: from to g b bsh status",
                                     path, lineno)
            branches.append(BranchSpec(toks[0], toks[1],
                                       _num(toks[2], path, lineno, "g"),
                                       _num(toks[3], path, lineno, "b"),
                                       _num(toks[4], path, lineno, "bsh"),
                                       int(_num(toks[5], path, lineno, "status"))))
        elif section == "generators":
            if len(toks) != 7:
                raise CaseParseError("generator record needs: bus M D g b E pmech",
                                     path, lineno)
            generators.append(GeneratorSpec(toks[0],
                                            *(_num(t, path, lineno, n)
                                              for t, n in zip(toks[1:], "MDgbEp"))))
        elif section == "loads":
            if len(toks) < 2:
                raise CaseParseError("load record needs: bus category [key=value ...]",
                                     path, lineno)
            category = toks[1].lower()
            if category not in LOAD_CATEGORIES:
                raise CaseParseError(f"unknown load category {toks[1]!r}",
                                     path, lineno)
            params = []
            for tok in toks[2:]:
                k, v = _kv(tok, path, lineno)
                params.append((k, _num(v, path, lineno, k)))
            loads.append(LoadSpec(toks[0], category, tuple(sorted(params))))

    if not seen_format:
        raise CaseParseError("missing case-format header", path)
    if base_mva is None:
        raise CaseParseError("missing base-mva header", path)

    case = RawCase(base_mva, tuple(buses), tuple(branches), tuple(generators),
                   tuple(loads), com_threshold)
    validate_case(case, path)
    return case


def validate_case(case: RawCase, path: str = "<case>") -> None:
    if case.base_mva <= 0:
        raise CaseValidationError("base-mva must be positive")
    ids = case.bus_ids()
    if len(set(ids)) != len(ids):
        raise CaseValidationError("duplicate bus ids")
    id_set = set(ids)
    if not case.branches:
        raise CaseValidationError("case has no branches (disconnected machines)")
    for br in case.branches:
        for end in (br.from_bus, br.to_bus):
            if end not in id_set:
                raise CaseValidationError(f"branch endpoint {end!r} is not a bus")
        if br.from_bus == br.to_bus:
            raise CaseValidationError(f"self-loop branch at {br.from_bus!r}")
    for gen in case.generators:
        if gen.bus not in id_set:
            raise CaseValidationError(f"generator at unknown bus {gen.bus!r}")
        if gen.m <= 0:
            raise CaseValidationError(f"generator at {gen.bus}: M must be > 0")
        if gen.e <= 0:
            raise CaseValidationError(f"generator at {gen.bus}: E must be > 0")
        if gen.d < 0:
            raise CaseValidationError(f"generator at {gen.bus}: D must be >= 0")
    for load in case.loads:
        if load.bus not in id_set:
            raise CaseValidationError(f"load at unknown bus {load.bus!r}")
        if load.category == "induction":
            if load.param("M", 0.0) <= 0:
                raise CaseValidationError(f"induction load at {load.bus}: M must be > 0")
        if load.category == "freq" and load.param("m", 0.0) <= 0:
            raise CaseValidationError(f"freq load at {load.bus}: m must be > 0")


def serialize_case(case: RawCase) -> str:
    """Render a RawCase back to case-file text (full double precision)."""
    out = [f"case-format {CASE_FORMAT}", f"base-mva {case.base_mva!r}"]
    if case.com_threshold is not None:
        out.append(f"com-threshold {case.com_threshold!r}")
    out.append("")
    out.append("[buses]")
    for b in case.buses:
        out.append(f"{b.id} {b.kind} {b.gsh!r} {b.bsh!r} {b.vset!r}")
    out.append("")
    out.append("[branches]")
    for br in case.branches:
        out.append(f"{br.from_bus} {br.to_bus} {br.g!r} {br.b!r} {br.bsh!r} {br.status}")
    out.append("")
    out.append("[generators]")
    for g in case.generators:
        out.append(f"{g.bus} {g.m!r} {g.d!r} {g.g!r} {g.b!r} {g.e!r} {g.pmech!r}")
    out.append("")
    out.append("[loads]")
    for ld in case.loads:
        kv = " ".join(f"{k}={v!r}" for k, v in ld.params)
        out.append(f"{ld.bus} {ld.category} {kv}".rstrip())
    out.append("")
    return "\n".join(out)


def make_lossless(case: RawCase) -> RawCase:
    """Zero all series resistances (branch and machine-link), keep reactances.

    A branch with series admittance y is mapped through its impedance
    z = 1/y: the resistive part of z is dropped and y rebuilt as -j/x.
    Shunts and line charging are reactive already and stay unchanged.
    """
    branches = []
    for br in case.branches:
        if br.g == 0.0:
            branches.append(br)
            continue
        z = 1.0 / complex(br.g, br.b)
        x = z.imag
        branches.append(replace(br, g=0.0, b=-1.0 / x))
    gens = []
    for gen in case.generators:
        if gen.g == 0.0:
            gens.append(gen)
            continue
        z = 1.0 / complex(gen.g, gen.b)
        gens.append(replace(gen, g=0.0, b=-1.0 / z.imag))
    return replace(case, branches=tuple(branches), generators=tuple(gens))


def parse_disturbances(text: str, path: str = "<dist>") -> list:
    """Parse a disturbance script into a time-ordered list of Disturbances."""
    events = []
    seen_format = False
    for lineno, toks in _tokens(text):
        if toks[0].lower() == "dist-format":
            version = int(_num(toks[1], path, lineno, "dist-format"))
            if version != DIST_FORMAT:
                raise CaseParseError(f"unsupported dist-format {version}", path, lineno)
            seen_format = True
            continue
        if len(toks) < 2:
            raise CaseParseError("disturbance record needs: time kind key=value ...",
                                 path, lineno)
        time = _num(toks[0], path, lineno, "time")
        kind = toks[1].lower()
        if kind not in DISTURBANCE_KINDS:
            raise CaseParseError(f"unknown disturbance kind {toks[1]!r}", path, lineno)
        params = dict(_kv(t, path, lineno) for t in toks[2:])

        if kind == "load-scale":
            if "bus" not in params or "factor" not in params:
                raise CaseParseError("load-scale needs bus= and factor=", path, lineno)
            factor = _num(params["factor"], path, lineno, "factor")
            if factor < 0:
                raise CaseParseError("load-scale factor must be >= 0", path, lineno)
            events.append(Disturbance("load-scale", time, bus=params["bus"],
                                      factor=factor))
        elif kind == "fault":
            if "bus" not in params:
                raise CaseParseError("fault needs bus=", path, lineno)
            g = _num(params.get("g", "0.0"), path, lineno, "g")
            b = _num(params.get("b", "-1e4"), path, lineno, "b")
            events.append(Disturbance("fault", time, bus=params["bus"],
                                      fault_y=complex(g, b)))
        elif kind == "clear-fault":
            if "bus" not in params:
                raise CaseParseError("clear-fault needs bus=", path, lineno)
            events.append(Disturbance("clear-fault", time, bus=params["bus"]))
        elif kind == "line-open":
            if "from" not in params or "to" not in params:
                raise CaseParseError("line-open needs from= and to=", path, lineno)
            events.append(Disturbance("line-open", time,
                                      from_bus=params["from"], to_bus=params["to"]))
    if not seen_format:
        raise CaseParseError("missing dist-format header", path)
    events.sort(key=lambda d: d.time)
    return events
