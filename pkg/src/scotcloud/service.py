"""GET-shaped annotation service with byte-capped response paging.

Every endpoint takes its parameters as URL query parameters, mutations
included: the consuming clients are scripts on a platform that only gets
friendly treatment for GET. Every response body is split into pages of at
most `page_cap` bytes (header line included); clients fetch page by page
and reassemble. Error bodies are single machine-parseable tokens.

Persistence is a directory holding `snapshot.rdf` (all clouds plus
topic-map edges) and `events.log` (one annotation event per line,
tab-separated). The log is the source of truth for clouds; the snapshot
carries the topic maps and doubles as the export document.
"""

from __future__ import annotations

import logging
import threading
import time
import uuid
from collections import deque
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Callable, Optional
from urllib.parse import parse_qsl, urlsplit

from . import model, rdfxml
from .model import AnnotationEvent, AnnotationStore, TopicMap, VocabConfig
from .rdfxml import Iri

log = logging.getLogger(__name__)

PAGE_HEADER_RESERVE = 32
SNAPSHOT_FILE = "snapshot.rdf"
EVENTS_FILE = "events.log"

OPERATIONS = ("tag", "cloud", "map", "attach", "export")


class PageError(ValueError):
    """Raw bytes do not decode as a page."""


class StoreLoadError(Exception):
    """A snapshot directory or document cannot be restored."""


@dataclass(frozen=True)
class Page:
    """One chunk of a response body. Indices are 1-based on the wire."""

    index: int
    total: int
    payload: bytes

    def __post_init__(self) -> None:
        if not (1 <= self.index <= self.total):
            raise ValueError(f"page index {self.index} outside 1..{self.total}")

    def encode(self) -> bytes:
        return b"page %d/%d %d\n" % (self.index, self.total, len(self.payload)) + self.payload


def paginate(body: bytes, cap: int) -> list[Page]:
    """Split a body so that header + payload never exceeds `cap` bytes."""
    if cap < 64:
        raise ValueError("page cap must be at least 64 bytes")
    chunk = cap - PAGE_HEADER_RESERVE
    total = max(1, -(-len(body) // chunk))
    return [
        Page(i + 1, total, body[i * chunk : (i + 1) * chunk])
        for i in range(total)
    ]


def decode_page(raw: bytes) -> Page:
    head, sep, payload = raw.partition(b"\n")
    if not sep:
        raise PageError("missing page header line")
    parts = head.split(b" ")
    if len(parts) != 3 or parts[0] != b"page" or b"/" not in parts[1]:
        raise PageError(f"bad page header: {head!r}")
    index_raw, _, total_raw = parts[1].partition(b"/")
    try:
        index, total, length = int(index_raw), int(total_raw), int(parts[2])
    except ValueError:
        raise PageError(f"bad page header: {head!r}") from None
    if length != len(payload):
        raise PageError(f"payload is {len(payload)} bytes, header says {length}")
    return Page(index, total, payload)


@dataclass
class ApiRequest:
    operation: str
    params: dict[str, str] = field(default_factory=dict)
    page: int = 0  # 0-based request parameter; responses display 1-based indices


@dataclass
class ApiResponse:
    status: int
    page: Page

    @property
    def ok(self) -> bool:
        return self.status == 200

    def encode(self) -> bytes:
        return self.page.encode()


@dataclass
class ServiceConfig:
    port: int = 8765
    store_path: Optional[str] = None
    base_uri: str = "http://yourdns.com"
    scot_ns: str = model.SCOT_NS_DEFAULT
    has_tag_iri: str = model.SIOC_HAS_TAG_DEFAULT
    page_cap: int = 2048
    rate_limit_max: Optional[int] = None
    rate_limit_window_ms: int = 20000

    def __post_init__(self) -> None:
        if self.page_cap < 64:
            raise ValueError("page cap must be at least 64 bytes")

    def vocab(self) -> VocabConfig:
        return VocabConfig(self.base_uri, self.scot_ns, self.has_tag_iri)


_CONFIG_KEYS = {
    "port": int,
    "store": str,
    "base_uri": str,
    "scot_ns": str,
    "has_tag_iri": str,
    "page_cap": int,
    "rate_limit_max": int,
    "rate_limit_window_ms": int,
}


def load_config(path: str) -> ServiceConfig:
    """Read a key=value config file; '#' starts a comment line."""
    values: dict[str, object] = {}
    for lineno, line in enumerate(Path(path).read_text("utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or key not in _CONFIG_KEYS:
            raise ValueError(f"{path}:{lineno}: bad config line {line!r}")
        values["store_path" if key == "store" else key] = _CONFIG_KEYS[key](value.strip())
    return ServiceConfig(**values)  # type: ignore[arg-type]


def request_from_url(path_query: str) -> ApiRequest:
    """Parse "/op?key=value&..." into a request. Raises ValueError."""
    split = urlsplit(path_query)
    operation = split.path.strip("/")
    if operation not in OPERATIONS:
        raise ValueError(f"unknown operation {operation!r}")
    params = dict(parse_qsl(split.query, keep_blank_values=True))
    page_raw = params.pop("page", "0")
    try:
        page = int(page_raw)
    except ValueError:
        raise ValueError(f"bad page number {page_raw!r}") from None
    return ApiRequest(operation, params, page)


def _now_wall_ms() -> int:
    return int(time.time() * 1000)


class AnnotationService:
    """In-process core of the server; the HTTP layer is a thin shell.

    Mutations are serialized under one lock; a failed request never
    touches the store or the on-disk log.
    """

    def __init__(
        self,
        config: Optional[ServiceConfig] = None,
        store: Optional[AnnotationStore] = None,
        now_ms: Optional[Callable[[], int]] = None,
    ):
        self.config = config or ServiceConfig()
        self.vocab = self.config.vocab()
        self.store = store if store is not None else AnnotationStore()
        self.now_ms = now_ms or _now_wall_ms
        self._lock = threading.Lock()
        self._recent: deque[int] = deque()
        if self.config.store_path and Path(self.config.store_path).exists():
            self.store = restore_store(self.config.store_path)

    # -- dispatch ----------------------------------------------------------

    def handle(self, request: ApiRequest) -> ApiResponse:
        if self.config.rate_limit_max is not None and self._throttled():
            return self._error(429, "throttled")
        handler = getattr(self, f"_op_{request.operation}", None)
        if handler is None:
            return self._error(404, "unknown")
        return handler(request)

    def handle_url(self, path_query: str) -> ApiResponse:
        try:
            request = request_from_url(path_query)
        except ValueError as exc:
            if str(exc).startswith("bad page"):
                return self._error(400, "badpage")
            return self._error(404, "unknown")
        return self.handle(request)

    def _throttled(self) -> bool:
        now = self.now_ms()
        window = self.config.rate_limit_window_ms
        with self._lock:
            while self._recent and self._recent[0] <= now - window:
                self._recent.popleft()
            if len(self._recent) >= self.config.rate_limit_max:
                return True
            self._recent.append(now)
            return False

    # -- responses ---------------------------------------------------------

    def _paged(self, status: int, body: bytes, page_index: int) -> ApiResponse:
        pages = paginate(body, self.config.page_cap)
        if not (0 <= page_index < len(pages)):
            return self._error(400, "badpage")
        return ApiResponse(status, pages[page_index])

    def _ok(self, body: bytes, page_index: int = 0) -> ApiResponse:
        return self._paged(200, body, page_index)

    def _error(self, status: int, token: str) -> ApiResponse:
        return ApiResponse(status, paginate(token.encode("ascii"), self.config.page_cap)[0])

    def _require(self, request: ApiRequest, *names: str) -> Optional[list[str]]:
        values = []
        for name in names:
            value = request.params.get(name, "")
            if not value:
                return None
            values.append(value)
        return values

    # -- operations ---------------------------------------------------------

    def _op_tag(self, request: ApiRequest) -> ApiResponse:
        got = self._require(request, "resource", "tag", "tagger")
        if got is None:
            return self._error(400, "missing")
        resource_raw, tag_raw, tagger_raw = got
        try:
            tagger = uuid.UUID(tagger_raw)
        except ValueError:
            return self._error(400, "badtagger")
        try:
            label = model.normalize_tag(tag_raw)
            resource = self.vocab.resource_iri(resource_raw)
        except (model.TagError, rdfxml.ValidationError):
            return self._error(400, "badtag")
        with self._lock:
            count = self.store.record(AnnotationEvent(self.now_ms(), tagger, resource, label))
            self._append_log_line(self.store.events[-1])
        return self._ok(f"ok {label} {count}".encode("utf-8"), request.page)

    def _op_cloud(self, request: ApiRequest) -> ApiResponse:
        got = self._require(request, "resource")
        if got is None:
            return self._error(400, "missing")
        try:
            resource = self.vocab.resource_iri(got[0])
        except (model.TagError, rdfxml.ValidationError):
            return self._error(400, "badtag")
        with self._lock:
            cloud = self.store.cloud_of(resource)
            document = rdfxml.serialize(model.cloud_to_rdf(cloud, self.vocab))
        return self._ok(document.encode("utf-8"), request.page)

    def _op_map(self, request: ApiRequest) -> ApiResponse:
        got = self._require(request, "root")
        if got is None:
            return self._error(400, "missing")
        depth_raw = request.params.get("depth", "1")
        try:
            depth = int(depth_raw)
        except ValueError:
            return self._error(400, "baddepth")
        if depth < 1:
            return self._error(400, "baddepth")
        with self._lock:
            try:
                tree = self.store.subtree(got[0], depth)
            except model.TagError:
                return self._error(400, "badtag")
            except model.UnknownConceptError:
                return self._error(404, "unknown")
            freqs = self.store.cloud_of(self.vocab.resource_iri(tree.root)).frequencies
            text = render_tree(tree, freqs)
        return self._ok(text.encode("utf-8"), request.page)

    def _op_attach(self, request: ApiRequest) -> ApiResponse:
        got = self._require(request, "parent", "child", "tagger")
        if got is None:
            return self._error(400, "missing")
        parent, child, tagger_raw = got
        try:
            uuid.UUID(tagger_raw)
        except ValueError:
            return self._error(400, "badtagger")
        with self._lock:
            try:
                self.store.attach(parent, child)
            except model.TagError:
                return self._error(400, "badtag")
            except model.AttachError as exc:
                return self._error(409, exc.reason)
            self._write_snapshot_file()
        return self._ok(b"ok", request.page)

    def _op_export(self, request: ApiRequest) -> ApiResponse:
        with self._lock:
            document = self.export_document()
        return self._ok(document.encode("utf-8"), request.page)

    def export_document(self) -> str:
        return rdfxml.serialize(model.store_to_graph(self.store, self.vocab))

    # -- persistence ---------------------------------------------------------

    def _append_log_line(self, event: AnnotationEvent) -> None:
        if not self.config.store_path:
            return
        directory = Path(self.config.store_path)
        directory.mkdir(parents=True, exist_ok=True)
        with (directory / EVENTS_FILE).open("a", encoding="utf-8", newline="\n") as fh:
            fh.write(format_event_line(event))

    def _write_snapshot_file(self) -> None:
        if not self.config.store_path:
            return
        directory = Path(self.config.store_path)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / SNAPSHOT_FILE).write_text(self.export_document(), "utf-8", newline="\n")

    def snapshot(self) -> None:
        if self.config.store_path:
            snapshot_store(self.store, self.config.store_path, self.vocab)


def render_tree(tree: TopicMap, frequencies: dict[str, int]) -> str:
    """Line-per-concept tree text: two spaces per level, rank order among siblings."""
    lines: list[str] = []

    def walk(label: str, level: int) -> None:
        count = frequencies.get(label, 0)
        lines.append(f"{'  ' * level}{label} ({count})")
        siblings = sorted(tree.children_of(label), key=lambda c: (-frequencies.get(c, 0), c))
        for child in siblings:
            walk(child, level + 1)

    walk(tree.root, 0)
    return "\n".join(lines) + "\n"


# -- snapshot files ----------------------------------------------------------


def format_event_line(event: AnnotationEvent) -> str:
    return f"{event.timestamp_ms}\t{event.tagger}\t{event.resource}\t{event.tag}\n"


def parse_event_line(line: str) -> AnnotationEvent:
    parts = line.rstrip("\n").split("\t")
    if len(parts) != 4:
        raise ValueError(f"event line does not have 4 fields: {line!r}")
    return AnnotationEvent(int(parts[0]), uuid.UUID(parts[1]), Iri(parts[2]), parts[3])


def snapshot_store(store: AnnotationStore, path: str, vocab: Optional[VocabConfig] = None) -> None:
    """Write `snapshot.rdf` and `events.log` under `path`."""
    vocab = vocab or VocabConfig()
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    document = rdfxml.serialize(model.store_to_graph(store, vocab))
    (directory / SNAPSHOT_FILE).write_text(document, "utf-8", newline="\n")
    with (directory / EVENTS_FILE).open("w", encoding="utf-8", newline="\n") as fh:
        for event in store.events:
            fh.write(format_event_line(event))


def restore_store(path: str) -> AnnotationStore:
    """Rebuild a store from a snapshot directory.

    Clouds come from replaying the event log; topic maps come from the
    snapshot document's broader edges. Raises StoreLoadError and leaves
    nothing half-built.
    """
    directory = Path(path)
    if not directory.is_dir():
        raise StoreLoadError(f"no snapshot directory at {path}")
    log_file = directory / EVENTS_FILE
    snapshot_file = directory / SNAPSHOT_FILE
    if not log_file.exists() and not snapshot_file.exists():
        raise StoreLoadError(f"{path} holds neither {EVENTS_FILE} nor {SNAPSHOT_FILE}")
    store = AnnotationStore()
    if log_file.exists():
        for lineno, line in enumerate(log_file.read_text("utf-8").splitlines(), 1):
            if not line:
                continue
            try:
                store.record(parse_event_line(line))
            except ValueError as exc:
                raise StoreLoadError(f"{log_file}:{lineno}: {exc}") from None
    if snapshot_file.exists():
        try:
            graph = rdfxml.parse(snapshot_file.read_text("utf-8"))
            recovered = model.store_from_graph(graph, VocabConfig())
        except (rdfxml.RdfParseError, model.CloudShapeError) as exc:
            raise StoreLoadError(f"{snapshot_file}: {exc}") from None
        store.adopt_maps(recovered)
    return store


# -- HTTP front door -----------------------------------------------------------


class _Handler(BaseHTTPRequestHandler):
    service: AnnotationService

    def do_GET(self) -> None:  # noqa: N802 (http.server API)
        response = self.service.handle_url(self.path)
        raw = response.encode()
        self.send_response(response.status)
        self.send_header("Content-Type", "text/plain; charset=utf-8")
        self.send_header("Content-Length", str(len(raw)))
        self.end_headers()
        self.wfile.write(raw)

    def log_message(self, fmt: str, *args) -> None:
        log.debug("http: " + fmt, *args)


def make_http_server(service: AnnotationService, host: str = "127.0.0.1") -> ThreadingHTTPServer:
    handler = type("Handler", (_Handler,), {"service": service})
    return ThreadingHTTPServer((host, service.config.port), handler)


def serve(service: AnnotationService, host: str = "127.0.0.1") -> None:
    """Run the blocking server loop; snapshots the store on the way out."""
    server = make_http_server(service, host)
    log.info("serving on %s:%d", host, server.server_address[1])
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
        service.snapshot()
