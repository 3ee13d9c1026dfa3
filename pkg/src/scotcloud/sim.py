"""Deterministic simulator of the in-world client stack.

Three script tiers: a listener that hears chat commands on a public
channel, a communication center that owns the request queue, and a pool
of communication units that actually talk to the server. Each unit may
issue at most 25 requests in any sliding 20-second window and lives
inside a 64 KiB memory budget, so the center defers work until some unit
has headroom and fans multi-page responses back together.

Everything runs on a simulated millisecond clock: given the same seed and
command schedule, two runs produce byte-identical event traces. The
server can be the in-process service (deterministic) or a live one over
HTTP (wire mode, no determinism guarantee).
"""

from __future__ import annotations

import hashlib
import heapq
import random
import uuid
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Union
from urllib.parse import urlencode

import requests

from .service import AnnotationService, Page, decode_page

WINDOW_MS = 20000
WINDOW_MAX = 25
MEMORY_BUDGET = 65536
MEMORY_WARN = 25600
REQUEST_COST = 512
PUBLIC_CHANNEL = 0
CENTER_CHANNEL = -1

USAGE = "commands: tag <resource> <tag> | cloud <resource> | map <root> [depth] | attach <parent> <child> | help"


class SimError(Exception):
    """The simulation was driven outside its contract."""


class ReassemblyError(ValueError):
    """A page set cannot be stitched back into a body."""


class ScriptFormatError(ValueError):
    """A bot script line does not match the replay format."""


@dataclass
class SimClock:
    """Simulated milliseconds; only ever moves forward, only explicitly."""

    now: int = 0

    def advance_to(self, t: int) -> None:
        if t < self.now:
            raise SimError(f"clock cannot move backwards ({t} < {self.now})")
        self.now = t


@dataclass
class LatencyModel:
    """Seeded request latency: base plus uniform jitter."""

    base_ms: int = 50
    jitter_ms: int = 0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.base_ms < 0 or self.jitter_ms < 0:
            raise ValueError("latency parameters must be non-negative")
        self._rng = random.Random(self.seed)

    def sample(self) -> int:
        return self.base_ms + self._rng.randint(0, self.jitter_ms)


@dataclass
class ChannelMessage:
    channel: int
    sender: uuid.UUID
    text: str

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("channel message text must be non-empty")


@dataclass
class ScriptUnit:
    uid: uuid.UUID
    role: str  # listener | center | comm-unit
    label: str
    memory_budget: int = MEMORY_BUDGET
    memory_used: int = 0
    frozen: bool = False
    issued: list[int] = field(default_factory=list)


def reassemble(pages: list[Page]) -> bytes:
    """Concatenate payloads of pages 1..n; total and indices must agree."""
    if not pages:
        raise ReassemblyError("no pages")
    total = pages[0].total
    by_index: dict[int, Page] = {}
    for page in pages:
        if page.total != total:
            raise ReassemblyError(f"inconsistent totals: {page.total} vs {total}")
        if page.index in by_index:
            raise ReassemblyError(f"duplicate page {page.index}")
        by_index[page.index] = page
    for i in range(1, total + 1):
        if i not in by_index:
            raise ReassemblyError(f"missing page {i}")
    return b"".join(by_index[i].payload for i in range(1, total + 1))


# -- client transports --------------------------------------------------------


class InProcessTransport:
    """Function-call transport straight into an AnnotationService."""

    def __init__(self, service: AnnotationService):
        self.service = service

    def get(self, path_query: str) -> tuple[int, bytes]:
        response = self.service.handle_url(path_query)
        return response.status, response.encode()


class HttpTransport:
    """Wire transport against a live server."""

    def __init__(self, base_url: str, session: Optional[requests.Session] = None):
        self.base_url = base_url.rstrip("/")
        self.session = session or requests.Session()

    def get(self, path_query: str) -> tuple[int, bytes]:
        r = self.session.get(self.base_url + path_query)
        return r.status_code, r.content


Transport = Union[InProcessTransport, HttpTransport]


def fetch_body(transport: Transport, path: str, params: list[tuple[str, str]]) -> tuple[int, bytes]:
    """Plain page-walking fetch (no rate limiting): reassembled full body."""
    status, raw = transport.get(build_query(path, params, 0))
    first = decode_page(raw)
    if status != 200 or first.total == 1:
        return status, first.payload
    pages = [first]
    for i in range(1, first.total):
        status_i, raw_i = transport.get(build_query(path, params, i))
        if status_i != 200:
            return status_i, decode_page(raw_i).payload
        pages.append(decode_page(raw_i))
    return 200, reassemble(pages)


def build_query(path: str, params: list[tuple[str, str]], page: int = 0) -> str:
    items = list(params)
    if page > 0:
        items.append(("page", str(page)))
    query = urlencode(items)
    return f"/{path}?{query}" if query else f"/{path}"


# -- chat command grammar ------------------------------------------------------


def parse_command(text: str) -> Optional[tuple[str, list[str]]]:
    """Split a chat line into (kind, args); None when it isn't a command."""
    tokens = text.split()
    if not tokens:
        return None
    kind, args = tokens[0], tokens[1:]
    if kind == "tag" and len(args) == 2:
        return kind, args
    if kind == "cloud" and len(args) == 1:
        return kind, args
    if kind == "map" and len(args) in (1, 2):
        if len(args) == 2 and (not args[1].isdigit() or int(args[1]) < 1):
            return None
        return kind, args
    if kind == "attach" and len(args) == 2:
        return kind, args
    if kind == "help" and not args:
        return kind, args
    return None


@dataclass
class ScriptLine:
    time_ms: int
    channel: int
    sender: uuid.UUID
    text: str


def parse_script(text: str) -> list[ScriptLine]:
    """Replay format: `@<time_ms> <channel> <sender-uuid> <command text>` per line."""
    lines: list[ScriptLine] = []
    last_time = 0
    for lineno, raw in enumerate(text.splitlines(), 1):
        if not raw.strip() or raw.lstrip().startswith("#"):
            continue
        parts = raw.split(" ", 3)
        if len(parts) != 4 or not parts[0].startswith("@"):
            raise ScriptFormatError(f"line {lineno}: expected '@time channel sender command'")
        try:
            time_ms = int(parts[0][1:])
            channel = int(parts[1])
            sender = uuid.UUID(parts[2])
        except ValueError as exc:
            raise ScriptFormatError(f"line {lineno}: {exc}") from None
        if time_ms < last_time:
            raise ScriptFormatError(f"line {lineno}: lines must be sorted by time")
        last_time = time_ms
        lines.append(ScriptLine(time_ms, channel, sender, parts[3]))
    return lines


# -- the simulator --------------------------------------------------------------


@dataclass
class _Command:
    kind: str
    params: list[tuple[str, str]]
    pages: dict[int, Page] = field(default_factory=dict)
    requested: set[int] = field(default_factory=set)
    total: Optional[int] = None
    failed: bool = False


@dataclass
class _Pending:
    command: _Command
    page_param: int

    @property
    def query(self) -> str:
        return build_query(self.command.kind, self.command.params, self.page_param)


def _sha8(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()[:8]


class Simulator:
    def __init__(
        self,
        target: Union[AnnotationService, Transport],
        units: int = 1,
        seed: int = 0,
        latency: Optional[LatencyModel] = None,
        window_mode: str = "sliding",
        window_ms: int = WINDOW_MS,
        max_in_window: int = WINDOW_MAX,
        request_cost: int = REQUEST_COST,
        memory_budget: int = MEMORY_BUDGET,
        warn_threshold: int = MEMORY_WARN,
        public_channel: int = PUBLIC_CHANNEL,
        center_channel: int = CENTER_CHANNEL,
    ):
        if units < 1:
            raise SimError("at least one communication unit is required")
        if window_mode not in ("sliding", "fixed"):
            raise SimError(f"unknown window mode {window_mode!r}")
        if isinstance(target, AnnotationService):
            target = InProcessTransport(target)
        self.transport = target
        if isinstance(self.transport, InProcessTransport):
            self.transport.service.now_ms = lambda: self.clock.now

        self.clock = SimClock()
        self.window_mode = window_mode
        self.window_ms = window_ms
        self.max_in_window = max_in_window
        self.request_cost = request_cost
        self.memory_budget = memory_budget
        self.warn_threshold = warn_threshold
        self.public_channel = public_channel
        self.center_channel = center_channel
        self.latency = latency or LatencyModel(seed=seed)

        self._rng = random.Random(seed)
        self.listener = self.spawn_unit("listener")
        self.center = self.spawn_unit("center")
        self.units: list[ScriptUnit] = []
        for _ in range(units):
            self.spawn_unit("comm-unit", memory_budget)

        self._rr = 0
        self._heap: list[tuple[int, int, str, object]] = []
        self._seq = 0
        self._queue: deque[_Pending] = deque()
        self._retry_times: set[int] = set()
        self.trace: list[str] = []
        self.commands: list[_Command] = []

    # -- units -----------------------------------------------------------------

    def spawn_unit(self, role: str, budget: int = MEMORY_BUDGET) -> ScriptUnit:
        if budget <= 0:
            raise SimError("memory budget must be positive")
        uid = uuid.UUID(int=self._rng.getrandbits(128), version=4)
        if role == "comm-unit":
            label = f"u{len(self.units) + 1}"
            unit = ScriptUnit(uid, role, label, budget)
            self.units.append(unit)
        elif role in ("listener", "center"):
            unit = ScriptUnit(uid, role, role, budget)
        else:
            raise SimError(f"unknown role {role!r}")
        return unit

    def memory_account(self, unit: ScriptUnit, delta: int) -> None:
        """Adjust a unit's memory; crossing thresholds emits events, exceeding freezes."""
        before = unit.memory_used
        unit.memory_used = max(0, before + delta)
        if before < self.warn_threshold <= unit.memory_used:
            self._emit(f"memory-warn {unit.label} {unit.memory_used}")
        if unit.memory_used > unit.memory_budget and not unit.frozen:
            unit.frozen = True
            self._emit(f"memory-exceeded {unit.label} {unit.memory_used}")

    # -- rate window -------------------------------------------------------------

    def _headroom(self, unit: ScriptUnit) -> bool:
        t = self.clock.now
        if self.window_mode == "fixed":
            bucket = t // self.window_ms
            count = sum(1 for s in unit.issued if s // self.window_ms == bucket)
        else:
            count = sum(1 for s in unit.issued if s >= t - self.window_ms)
        return count < self.max_in_window

    def _next_free_time(self, unit: ScriptUnit) -> int:
        t = self.clock.now
        if self._headroom(unit):
            return t
        if self.window_mode == "fixed":
            return (t // self.window_ms + 1) * self.window_ms
        in_window = sorted(s for s in unit.issued if s >= t - self.window_ms)
        # The (count-max+1)-th oldest stamp must age out before a slot opens.
        kth = in_window[len(in_window) - self.max_in_window]
        return kth + self.window_ms + 1

    # -- event plumbing -----------------------------------------------------------

    def _emit(self, detail: str) -> str:
        line = f"{self.clock.now} {detail}"
        self.trace.append(line)
        return line

    def _push(self, time_ms: int, kind: str, payload: object = None) -> None:
        heapq.heappush(self._heap, (time_ms, self._seq, kind, payload))
        self._seq += 1

    # -- chat front end --------------------------------------------------------------

    def post_chat(self, channel: int, sender: uuid.UUID, text: str) -> list[str]:
        """Deliver one chat line at the current instant; returns new trace lines."""
        message = ChannelMessage(channel, sender, text)
        mark = len(self.trace)
        self._emit(f"chat {message.channel} {message.sender} {message.text}")
        if message.channel == self.public_channel:
            parsed = parse_command(message.text)
            if parsed is None or parsed[0] == "help":
                self._emit(f"usage {message.channel} {USAGE}")
            else:
                kind, args = parsed
                self._accept(kind, args, message.sender)
        return self.trace[mark:]

    def _accept(self, kind: str, args: list[str], sender: uuid.UUID) -> None:
        if kind == "tag":
            params = [("resource", args[0]), ("tag", args[1]), ("tagger", str(sender))]
        elif kind == "cloud":
            params = [("resource", args[0])]
        elif kind == "map":
            params = [("root", args[0]), ("depth", args[1] if len(args) > 1 else "1")]
        else:  # attach
            params = [("parent", args[0]), ("child", args[1]), ("tagger", str(sender))]
        command = _Command(kind, params)
        command.requested.add(1)
        self.commands.append(command)
        pending = _Pending(command, 0)
        # listener hands the parsed command to the center on the private channel
        self._emit(f"request {self.center_channel} {kind} {pending.query}")
        self.center_assign(pending)

    # -- center and units ---------------------------------------------------------------

    def center_assign(self, pending: _Pending) -> Optional[ScriptUnit]:
        """Hand the request to a unit with window headroom, or defer it."""
        if not self.units:
            raise SimError("no communication units spawned")
        unit = self._try_assign(pending)
        if unit is None:
            self._emit(f"defer {pending.query}")
            self._queue.append(pending)
            self._schedule_retry()
        return unit

    def _try_assign(self, pending: _Pending) -> Optional[ScriptUnit]:
        n = len(self.units)
        for k in range(n):
            unit = self.units[(self._rr + k) % n]
            if not unit.frozen and self._headroom(unit):
                self._rr = (self._rr + k + 1) % n
                self.unit_issue(unit, pending)
                return unit
        return None

    def unit_issue(self, unit: ScriptUnit, pending: _Pending) -> None:
        if unit.frozen:
            raise SimError(f"{unit.label} is frozen")
        if not self._headroom(unit):
            raise SimError(f"{unit.label} has no window headroom")
        unit.issued.append(self.clock.now)
        self.memory_account(unit, self.request_cost)
        self._emit(f"issue {unit.label} {pending.query}")
        status, raw = self.transport.get(pending.query)
        self._push(self.clock.now + self.latency.sample(), "response", (unit, pending, status, raw))

    def _schedule_retry(self) -> None:
        candidates = [self._next_free_time(u) for u in self.units if not u.frozen]
        if not candidates:
            return  # every unit is frozen; queued work can never run
        t = min(candidates)
        if t not in self._retry_times:
            self._retry_times.add(t)
            self._push(t, "retry")

    def _on_retry(self) -> None:
        while self._queue:
            unit = self._try_assign(self._queue[0])
            if unit is None:
                break
            self._queue.popleft()
        if self._queue:
            self._schedule_retry()

    def _on_response(self, unit: ScriptUnit, pending: _Pending, status: int, raw: bytes) -> None:
        self.memory_account(unit, -self.request_cost)
        page = decode_page(raw)
        self._emit(f"response {unit.label} {status} {len(raw)} {_sha8(raw)}")
        command = pending.command
        if command.failed:
            return  # a sibling page already failed the command
        if status != 200:
            command.failed = True
            self._emit(f"complete {command.kind} {status} {page.payload.decode('utf-8', 'replace')}")
            return
        command.pages[page.index] = page
        command.total = page.total
        if len(command.pages) == command.total:
            body = reassemble(list(command.pages.values()))
            self._emit(f"complete {command.kind} {status} {len(body)} {_sha8(body)}")
            return
        for index in range(1, command.total + 1):
            if index not in command.requested:
                command.requested.add(index)
                self.center_assign(_Pending(command, index - 1))

    # -- the loop ------------------------------------------------------------------------

    def advance(self, ms: int) -> list[str]:
        """Move the clock forward, firing every event due on the way."""
        if ms < 0:
            raise SimError("cannot advance by a negative amount")
        target = self.clock.now + ms
        mark = len(self.trace)
        while self._heap and self._heap[0][0] <= target:
            time_ms, _, kind, payload = heapq.heappop(self._heap)
            self.clock.advance_to(time_ms)
            if kind == "chat":
                line: ScriptLine = payload  # type: ignore[assignment]
                self.post_chat(line.channel, line.sender, line.text)
            elif kind == "retry":
                self._retry_times.discard(time_ms)
                self._on_retry()
            elif kind == "response":
                self._on_response(*payload)  # type: ignore[misc]
        self.clock.advance_to(target)
        return self.trace[mark:]

    def run(self, script: list[ScriptLine]) -> str:
        """Replay a bot script to quiescence; returns the full trace text."""
        for line in script:
            self._push(line.time_ms, "chat", line)
        while self._heap:
            self.advance(self._heap[0][0] - self.clock.now)
        return "".join(line + "\n" for line in self.trace)
