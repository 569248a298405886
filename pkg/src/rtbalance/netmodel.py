"""Grid, schedule, contract and bid data model.

Everything here is immutable after loading. Case and market files are JSON;
see README.md for the schemas.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

BUS_KINDS = ("generator", "consumer", "mixed", "passive")
SIDES = ("generator", "consumer")
CURTAILMENT_MODES = ("both-sides", "seller-only", "buyer-only")


class CaseFormatError(ValueError):
    """Raised when an input file does not follow the schema."""

    def __init__(self, message, where=None):
        self.where = where
        super().__init__(f"{where}: {message}" if where else message)


class ValidationError(ValueError):
    """Raised when loaded data violates one or more invariants."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


def to_pu(value, base_mva):
    return value / base_mva


def from_pu(value, base_mva):
    return value * base_mva


@dataclass(frozen=True)
class Bus:
    id: int
    kind: str = "passive"
    base_load_p: float = 0.0
    base_load_q: float = 0.0
    v_min: float = 0.94
    v_max: float = 1.06
    eta: float | None = None
    v_set: float = 1.0
    gs: float = 0.0
    bs: float = 0.0


@dataclass(frozen=True)
class Branch:
    id: int
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_shunt: float = 0.0
    flow_limit: float = math.inf
    is_transformer: bool = False
    tap: float = 1.0
    tap_min: float = 1.0
    tap_max: float = 1.0


@dataclass(frozen=True)
class NetworkCase:
    base_mva: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    slack_bus: int
    name: str = ""

    @property
    def n_bus(self):
        return len(self.buses)

    @property
    def bus_ids(self):
        return [b.id for b in self.buses]

    def bus_index(self, bus_id):
        return self._index[bus_id]

    @property
    def _index(self):
        # cached on first use; the instance is frozen so bypass __setattr__
        try:
            return self.__dict__["_idx_cache"]
        except KeyError:
            idx = {b.id: k for k, b in enumerate(self.buses)}
            object.__setattr__(self, "_idx_cache", idx)
            return idx

    @property
    def slack_index(self):
        return self.bus_index(self.slack_bus)

    def bus(self, bus_id):
        return self.buses[self.bus_index(bus_id)]

    def branch(self, branch_id):
        for br in self.branches:
            if br.id == branch_id:
                return br
        raise KeyError(f"unknown branch {branch_id}")

    def branch_position(self, branch_id):
        for k, br in enumerate(self.branches):
            if br.id == branch_id:
                return k
        raise KeyError(f"unknown branch {branch_id}")

    @property
    def transformers(self):
        return [br for br in self.branches if br.is_transformer]

    def load_allocation(self):
        """Per-bus load allocation factors, normalised over load buses."""
        explicit = {b.id: b.eta for b in self.buses if b.eta is not None}
        if explicit:
            raw = [explicit.get(b.id, 0.0) for b in self.buses]
        else:
            raw = [max(b.base_load_p, 0.0) for b in self.buses]
        total = sum(raw)
        if total <= 0:
            raise ValidationError(["no load buses to allocate a load change to"])
        return [r / total for r in raw]


@dataclass(frozen=True)
class BidCurve:
    """Step-wise bid: a tuple of (quantity MW or None, price) blocks.

    A ``None`` quantity means the block spans whatever range is left.
    """
    steps: tuple[tuple[float | None, float], ...] = ()

    def __bool__(self):
        return bool(self.steps)

    def blocks(self, available):
        """Split ``available`` MW into (quantity, price) blocks."""
        out = []
        left = max(available, 0.0)
        for qty, price in self.steps:
            q = left if qty is None else min(qty, left)
            out.append((q, price))
            left -= q
        return out

    def marginal_price(self, amount, available):
        price = None
        for q, p in self.blocks(available):
            price = p
            if amount <= q + 1e-9:
                break
            amount -= q
        return price


@dataclass(frozen=True)
class ParticipantBids:
    incr: BidCurve = BidCurve()
    decr: BidCurve = BidCurve()
    reserve_energy_price: float | None = None
    reserve_capacity_price: float | None = None
    w_plus: float | None = None
    w_minus: float | None = None


@dataclass(frozen=True)
class Participant:
    bus: int
    side: str
    p0: float
    p_min: float
    p_max: float
    q0: float = 0.0
    q_min: float = 0.0
    q_max: float = 0.0
    reserve_mw: float = 0.0

    @property
    def name(self):
        return f"{'G' if self.side == 'generator' else 'C'}-{self.bus}"

    @property
    def beta(self):
        return 0 if self.side == "generator" else 1


@dataclass(frozen=True)
class BilateralContract:
    id: str
    seller_bus: int
    buyer_bus: int
    amount_mw: float
    curtail_price: float
    curtailment_mode: str = "both-sides"


@dataclass(frozen=True)
class MarketSchedule:
    participants: tuple[Participant, ...]

    def __iter__(self):
        return iter(self.participants)

    def __len__(self):
        return len(self.participants)

    def get(self, name):
        for p in self.participants:
            if p.name == name:
                return p
        raise KeyError(name)

    def at_bus(self, bus_id, side=None):
        return [p for p in self.participants
                if p.bus == bus_id and (side is None or p.side == side)]


@dataclass(frozen=True)
class BidSet:
    bids: Mapping[str, ParticipantBids] = field(default_factory=dict)
    tap_prices: Mapping[int, float] = field(default_factory=dict)

    def of(self, name):
        return self.bids.get(name, ParticipantBids())


@dataclass
class ValidationReport:
    problems: list[str] = field(default_factory=list)

    def __bool__(self):
        return not self.problems

    @property
    def ok(self):
        return not self.problems

    def add(self, message):
        self.problems.append(message)


# --------------------------------------------------------------------------
# parsing

def _req(d, key, where, kind=float):
    if key not in d:
        raise CaseFormatError(f"missing field '{key}'", where)
    try:
        return kind(d[key])
    except (TypeError, ValueError):
        raise CaseFormatError(f"field '{key}' is not a valid {kind.__name__}: {d[key]!r}", where) from None


def _opt(d, key, default, where, kind=float):
    if d.get(key) is None:
        return default
    return _req(d, key, where, kind)


def _parse_json(source, what):
    if isinstance(source, Mapping):
        return source
    try:
        return json.loads(source)
    except json.JSONDecodeError as exc:
        raise CaseFormatError(f"invalid JSON in {what} (line {exc.lineno}, col {exc.colno}): {exc.msg}") from None


def load_case(source):
    """Parse case-file text (or an already decoded dict) into a NetworkCase."""
    doc = _parse_json(source, "case file")
    for key in ("base_mva", "slack_bus", "buses", "branches"):
        if key not in doc:
            raise CaseFormatError(f"missing top-level key '{key}'", "case")
    buses = []
    for k, rec in enumerate(doc["buses"]):
        where = f"buses[{k}]"
        kind = rec.get("kind")
        load_p = _opt(rec, "load_p_mw", 0.0, where)
        if kind is None:
            kind = "consumer" if load_p > 0 else "passive"
        if kind not in BUS_KINDS:
            raise CaseFormatError(f"unknown bus kind {kind!r}", where)
        buses.append(Bus(
            id=_req(rec, "id", where, int),
            kind=kind,
            base_load_p=load_p,
            base_load_q=_opt(rec, "load_q_mvar", 0.0, where),
            v_min=_req(rec, "v_min", where),
            v_max=_req(rec, "v_max", where),
            eta=_opt(rec, "eta", None, where),
            v_set=_opt(rec, "v_set", 1.0, where),
            gs=_opt(rec, "gs_mw", 0.0, where),
            bs=_opt(rec, "bs_mvar", 0.0, where),
        ))
    branches = []
    for k, rec in enumerate(doc["branches"]):
        where = f"branches[{k}]"
        is_tr = bool(rec.get("transformer", False))
        tap = _opt(rec, "tap", 1.0, where)
        branches.append(Branch(
            id=_req(rec, "id", where, int),
            from_bus=_req(rec, "from", where, int),
            to_bus=_req(rec, "to", where, int),
            r=_req(rec, "r_pu", where),
            x=_req(rec, "x_pu", where),
            b_shunt=_opt(rec, "b_pu", 0.0, where),
            flow_limit=_opt(rec, "limit_mw", math.inf, where),
            is_transformer=is_tr,
            tap=tap,
            tap_min=_opt(rec, "tap_min", tap, where),
            tap_max=_opt(rec, "tap_max", tap, where),
        ))
    slack = doc["slack_bus"]
    if isinstance(slack, list):
        raise ValidationError([f"exactly one slack bus required, got {len(slack)}"])
    case = NetworkCase(
        base_mva=_req(doc, "base_mva", "case"),
        buses=tuple(buses),
        branches=tuple(branches),
        slack_bus=_req(doc, "slack_bus", "case", int),
        name=str(doc.get("name", "")),
    )
    problems = case_problems(case)
    if problems:
        raise ValidationError(problems)
    return case


def case_problems(case):
    problems = []
    ids = [b.id for b in case.buses]
    if len(set(ids)) != len(ids):
        problems.append("duplicate bus ids")
    idset = set(ids)
    if case.base_mva <= 0:
        problems.append("base_mva must be positive")
    if case.slack_bus not in idset:
        problems.append(f"slack bus {case.slack_bus} does not exist")
    for b in case.buses:
        if not b.v_min < b.v_max:
            problems.append(f"bus {b.id}: v_min must be below v_max")
        if not (0.5 <= b.v_min <= 1.5 and 0.5 <= b.v_max <= 1.5):
            problems.append(f"bus {b.id}: voltage limits outside [0.5, 1.5]")
        if b.eta is not None and b.eta < 0:
            problems.append(f"bus {b.id}: eta must be non-negative")
    etas = [b.eta for b in case.buses if b.eta is not None]
    if etas and abs(sum(etas) - 1.0) > 1e-9:
        problems.append(f"load allocation factors sum to {sum(etas):.12g}, expected 1")
    br_ids = [br.id for br in case.branches]
    if len(set(br_ids)) != len(br_ids):
        problems.append("duplicate branch ids")
    for br in case.branches:
        if br.from_bus not in idset or br.to_bus not in idset:
            problems.append(f"branch {br.id}: endpoint bus does not exist")
        if br.from_bus == br.to_bus:
            problems.append(f"branch {br.id}: self loop")
        if br.x == 0:
            problems.append(f"branch {br.id}: zero reactance")
        if not br.flow_limit > 0:
            problems.append(f"branch {br.id}: flow limit must be positive")
        if br.is_transformer and not br.tap_min <= br.tap <= br.tap_max:
            problems.append(f"branch {br.id}: tap outside [tap_min, tap_max]")
    if not problems and not _connected(case):
        problems.append("network is not connected")
    return problems


def _connected(case):
    adj = {b.id: set() for b in case.buses}
    for br in case.branches:
        adj[br.from_bus].add(br.to_bus)
        adj[br.to_bus].add(br.from_bus)
    seen = {case.slack_bus}
    stack = [case.slack_bus]
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    return len(seen) == len(adj)


def case_to_dict(case):
    buses = []
    for b in case.buses:
        rec = {"id": b.id, "kind": b.kind, "load_p_mw": b.base_load_p, "load_q_mvar": b.base_load_q,
               "v_min": b.v_min, "v_max": b.v_max, "v_set": b.v_set}
        if b.eta is not None:
            rec["eta"] = b.eta
        if b.gs:
            rec["gs_mw"] = b.gs
        if b.bs:
            rec["bs_mvar"] = b.bs
        buses.append(rec)
    branches = []
    for br in case.branches:
        rec = {"id": br.id, "from": br.from_bus, "to": br.to_bus, "r_pu": br.r, "x_pu": br.x,
               "b_pu": br.b_shunt}
        if math.isfinite(br.flow_limit):
            rec["limit_mw"] = br.flow_limit
        if br.is_transformer:
            rec.update(transformer=True, tap=br.tap, tap_min=br.tap_min, tap_max=br.tap_max)
        branches.append(rec)
    return {"name": case.name, "base_mva": case.base_mva, "slack_bus": case.slack_bus,
            "buses": buses, "branches": branches}


def dump_case(case):
    return json.dumps(case_to_dict(case), indent=1)


def _curve(recs, where):
    steps = []
    for k, rec in enumerate(recs or []):
        w = f"{where}[{k}]"
        qty = _opt(rec, "mw", None, w)
        if qty is not None and qty <= 0:
            raise CaseFormatError("bid step quantities must be positive", w)
        steps.append((qty, _req(rec, "price", w)))
    return BidCurve(tuple(steps))


def load_market(source, case):
    """Parse a market file into (MarketSchedule, BidSet, contracts)."""
    doc = _parse_json(source, "market file")
    if "participants" not in doc:
        raise CaseFormatError("missing top-level key 'participants'", "market")
    known = set(case.bus_ids)
    parts, bids = [], {}
    for k, rec in enumerate(doc["participants"]):
        where = f"participants[{k}]"
        side = rec.get("side")
        if side not in SIDES:
            raise CaseFormatError(f"side must be one of {SIDES}", where)
        bus = _req(rec, "bus", where, int)
        if bus not in known:
            raise CaseFormatError(f"unknown bus id {bus}", where)
        p0 = _req(rec, "p0_mw", where)
        q0 = _opt(rec, "q0", 0.0, where)
        part = Participant(
            bus=bus, side=side, p0=p0,
            p_min=_req(rec, "p_min_mw", where),
            p_max=_req(rec, "p_max_mw", where),
            q0=q0,
            q_min=_opt(rec, "q_min", q0, where),
            q_max=_opt(rec, "q_max", q0, where),
            reserve_mw=_opt(rec, "reserve_mw", 0.0, where),
        )
        if part.name in bids:
            raise CaseFormatError(f"duplicate participant {part.name}", where)
        b = rec.get("bids") or {}
        bids[part.name] = ParticipantBids(
            incr=_curve(b.get("incr"), where + ".bids.incr"),
            decr=_curve(b.get("decr"), where + ".bids.decr"),
            reserve_energy_price=_opt(b, "reserve_energy_price", None, where),
            reserve_capacity_price=_opt(b, "reserve_capacity_price", None, where),
            w_plus=_opt(b, "w_plus", None, where),
            w_minus=_opt(b, "w_minus", None, where),
        )
        parts.append(part)
    contracts = []
    for k, rec in enumerate(doc.get("contracts", [])):
        where = f"contracts[{k}]"
        mode = rec.get("mode", "both-sides")
        if mode not in CURTAILMENT_MODES:
            raise CaseFormatError(f"unknown curtailment mode {mode!r}", where)
        c = BilateralContract(
            id=str(rec.get("id", f"B{k + 1}")),
            seller_bus=_req(rec, "seller_bus", where, int),
            buyer_bus=_req(rec, "buyer_bus", where, int),
            amount_mw=_req(rec, "amount_mw", where),
            curtail_price=_req(rec, "curtail_price", where),
            curtailment_mode=mode,
        )
        for bus in (c.seller_bus, c.buyer_bus):
            if bus not in known:
                raise CaseFormatError(f"unknown bus id {bus}", where)
        if not any(p.bus == c.seller_bus and p.side == "generator" for p in parts):
            raise CaseFormatError(f"seller bus {c.seller_bus} has no scheduled generator", where)
        contracts.append(c)
    taps = {}
    tr_ids = {br.id for br in case.transformers}
    for k, rec in enumerate(doc.get("tap_bids", [])):
        where = f"tap_bids[{k}]"
        bid = _req(rec, "branch", where, int)
        if bid not in tr_ids:
            raise CaseFormatError(f"tap bid references branch {bid}, which is not a transformer", where)
        taps[bid] = _req(rec, "price", where)
    problems = []
    for p in parts:
        problems += _participant_problems(p)
    for c in contracts:
        if c.amount_mw <= 0:
            problems.append(f"contract {c.id}: amount must be positive")
        if c.curtail_price < 0:
            problems.append(f"contract {c.id}: curtailment price must be non-negative")
        if c.seller_bus == c.buyer_bus:
            problems.append(f"contract {c.id}: seller and buyer are the same bus")
    if problems:
        raise ValidationError(problems)
    return MarketSchedule(tuple(parts)), BidSet(bids, taps), contracts


def _participant_problems(p):
    out = []
    if not p.p_min <= p.p0 <= p.p_max:
        out.append(f"{p.name}: p0 outside [p_min, p_max]")
    if not p.q_min <= p.q0 <= p.q_max:
        out.append(f"{p.name}: q0 outside [q_min, q_max]")
    if p.reserve_mw < 0:
        out.append(f"{p.name}: negative reserve")
    return out


def validate_consistency(case, schedule, contracts, bids=None):
    """Cross-check case, schedule, contracts and bids; never raises."""
    report = ValidationReport()
    for p in schedule:
        if p.p0 + p.reserve_mw > p.p_max + 1e-9:
            report.add(f"{p.name}: p0 + reserve > p_max ({p.p0 + p.reserve_mw:g} > {p.p_max:g})")
        if p.side == "consumer" and p.p0 > case.bus(p.bus).base_load_p + 1e-9:
            report.add(f"{p.name}: scheduled consumption exceeds bus load")
    sold = {}
    for c in contracts:
        sold[c.seller_bus] = sold.get(c.seller_bus, 0.0) + c.amount_mw
        if c.amount_mw > case.bus(c.buyer_bus).base_load_p + 1e-9:
            report.add(f"contract {c.id}: bilateral exceeds buyer load")
    for bus, amount in sold.items():
        gen = sum(p.p0 for p in schedule.at_bus(bus, "generator"))
        if amount > gen + 1e-9:
            report.add(f"bus {bus}: bilateral exceeds base point ({amount:g} > {gen:g})")
    if bids is not None:
        for name, b in bids.bids.items():
            prices = [pr for _, pr in b.incr.steps]
            if any(b2 < b1 for b1, b2 in zip(prices, prices[1:])):
                report.add(f"{name}: incremental bid prices decrease between steps")
            prices = [pr for _, pr in b.decr.steps]
            if any(b2 > b1 for b1, b2 in zip(prices, prices[1:])):
                report.add(f"{name}: decremental bid prices increase between steps")
            for qty, _ in b.incr.steps[:-1] + b.decr.steps[:-1]:
                if qty is None:
                    report.add(f"{name}: only the last bid step may omit its quantity")
    return report


def read_text(path):
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def bundled_path(*parts):
    return os.path.join(os.path.dirname(os.path.abspath(__file__)), "data", *parts)


def load_bundled():
    """The bundled IEEE 30-bus case with its reference market data."""
    case = load_case(read_text(bundled_path("case30.json")))
    schedule, bids, contracts = load_market(read_text(bundled_path("market.json")), case)
    return case, schedule, bids, contracts


def with_branch_limits(case, limits: Mapping[int, float] | Iterable[tuple[int, float]]):
    from dataclasses import replace
    limits = dict(limits)
    for bid in limits:
        case.branch(bid)
    branches = tuple(replace(br, flow_limit=limits[br.id]) if br.id in limits else br
                     for br in case.branches)
    return replace(case, branches=branches)


def with_taps(case, taps: Mapping[int, float]):
    from dataclasses import replace
    branches = tuple(replace(br, tap=taps[br.id]) if br.id in taps else br for br in case.branches)
    return replace(case, branches=branches)


def as_dict(obj) -> dict[str, Any]:
    from dataclasses import asdict
    return asdict(obj)
