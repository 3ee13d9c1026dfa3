"""Single command-line entry point.

Subcommands: serve (run the HTTP service), tag/cloud/map/attach/export
(speak the GET protocol to a running server), import (rebuild a store
directory from an exported document), simulate (replay a bot script
through the client simulator), layout (emit a scene for a cloud or map).

Exit codes: 0 success, 1 usage, 2 server/protocol error, 3 data error.
Human-readable output goes to stdout, diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import os
import sys
import uuid
from pathlib import Path
from typing import Optional

import requests

from . import layout as layout_mod
from . import model, rdfxml, service as service_mod, sim

ENV_URL = "SCOTCLOUD_URL"
ENV_PORT = "SCOTCLOUD_PORT"
DEFAULT_URL = "http://127.0.0.1:8765"
CLI_TAGGER = uuid.uuid5(uuid.NAMESPACE_URL, "scotcloud:cli")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PROTOCOL = 2
EXIT_DATA = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # usage problems exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fail(code: int, message: str) -> int:
    print(message, file=sys.stderr)
    return code


def _server_url(args: argparse.Namespace) -> str:
    return getattr(args, "url", None) or os.environ.get(ENV_URL) or DEFAULT_URL


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text, "utf-8", newline="\n")
    else:
        sys.stdout.write(text)


def _call(args: argparse.Namespace, path: str, params: list[tuple[str, str]]) -> tuple[int, str]:
    transport = sim.HttpTransport(_server_url(args))
    status, body = sim.fetch_body(transport, path, params)
    return status, body.decode("utf-8")


# tokens that mean the request data was refused, vs. protocol misuse
_DATA_TOKENS = {"cycle", "parented", "merge", "unknown", "badtag", "baddepth"}


def _status_exit(status: int, body: str) -> int:
    data = status in (404, 409) or body.strip() in _DATA_TOKENS
    return _fail(EXIT_DATA if data else EXIT_PROTOCOL, f"server said {status}: {body}")


# -- subcommands ---------------------------------------------------------------


def _cmd_serve(args: argparse.Namespace) -> int:
    if args.config:
        try:
            config = service_mod.load_config(args.config)
        except (OSError, ValueError) as exc:
            return _fail(EXIT_DATA, f"config: {exc}")
    else:
        config = service_mod.ServiceConfig()
    if os.environ.get(ENV_PORT):
        config.port = int(os.environ[ENV_PORT])
    if args.port is not None:
        config.port = args.port
    if args.store:
        config.store_path = args.store
    try:
        svc = service_mod.AnnotationService(config)
    except service_mod.StoreLoadError as exc:
        return _fail(EXIT_DATA, f"store: {exc}")
    print(f"serving on {args.host}:{config.port}", file=sys.stderr)
    service_mod.serve(svc, args.host)
    return EXIT_OK


def _cmd_tag(args: argparse.Namespace) -> int:
    params = [("resource", args.resource), ("tag", args.tag), ("tagger", args.tagger)]
    status, body = _call(args, "tag", params)
    if status != 200:
        return _status_exit(status, body)
    print(body.removeprefix("ok "))
    return EXIT_OK


def _cmd_cloud(args: argparse.Namespace) -> int:
    status, body = _call(args, "cloud", [("resource", args.resource)])
    if status != 200:
        return _status_exit(status, body)
    _emit(body, args.out)
    return EXIT_OK


def _cmd_map(args: argparse.Namespace) -> int:
    params = [("root", args.root), ("depth", str(args.depth))]
    status, body = _call(args, "map", params)
    if status != 200:
        return _status_exit(status, body)
    _emit(body, args.out)
    return EXIT_OK


def _cmd_attach(args: argparse.Namespace) -> int:
    params = [("parent", args.parent), ("child", args.child), ("tagger", args.tagger)]
    status, body = _call(args, "attach", params)
    if status != 200:
        return _status_exit(status, body)
    print(body)
    return EXIT_OK


def _cmd_export(args: argparse.Namespace) -> int:
    status, body = _call(args, "export", [])
    if status != 200:
        return _status_exit(status, body)
    _emit(body, args.out)
    return EXIT_OK


def _cmd_import(args: argparse.Namespace) -> int:
    try:
        document = Path(args.infile).read_text("utf-8")
    except OSError as exc:
        return _fail(EXIT_DATA, f"import: {exc}")
    try:
        graph = rdfxml.parse(document)
        store = model.store_from_graph(graph, model.VocabConfig())
    except (rdfxml.RdfParseError, model.CloudShapeError) as exc:
        return _fail(EXIT_DATA, f"import: {exc}")
    service_mod.snapshot_store(store, args.store)
    print(f"imported {len(store.clouds)} clouds, {len(store.maps)} maps into {args.store}", file=sys.stderr)
    return EXIT_OK


def _cmd_simulate(args: argparse.Namespace) -> int:
    try:
        script = sim.parse_script(Path(args.script).read_text("utf-8"))
    except OSError as exc:
        return _fail(EXIT_DATA, f"script: {exc}")
    except sim.ScriptFormatError as exc:
        return _fail(EXIT_DATA, f"script: {exc}")

    if args.url or os.environ.get(ENV_URL):
        target: sim.Transport | service_mod.AnnotationService = sim.HttpTransport(_server_url(args))
    else:
        store = None
        if args.store:
            try:
                store = service_mod.restore_store(args.store)
            except service_mod.StoreLoadError as exc:
                return _fail(EXIT_DATA, f"store: {exc}")
        target = service_mod.AnnotationService(store=store)
    simulator = sim.Simulator(
        target,
        units=args.units,
        seed=args.seed,
        latency=sim.LatencyModel(args.base_latency, args.jitter, args.seed),
        window_mode=args.window_mode,
    )
    sys.stdout.write(simulator.run(script))
    return EXIT_OK


def _cmd_layout(args: argparse.Namespace) -> int:
    if bool(args.resource) == bool(args.root):
        return _fail(EXIT_USAGE, "layout: give exactly one of --resource or --root")
    if args.store:
        try:
            store = service_mod.restore_store(args.store)
        except service_mod.StoreLoadError as exc:
            return _fail(EXIT_DATA, f"store: {exc}")
    else:
        store = model.AnnotationStore()
    vocab = model.VocabConfig()
    params = layout_mod.LayoutParams()
    try:
        if args.resource:
            cloud = store.cloud_of(vocab.resource_iri(args.resource))
            scene = layout_mod.layout_cloud(cloud, params, args.now)
        else:
            full = store.tree_of(model.normalize_tag(args.root))
            if full is None:
                return _fail(EXIT_DATA, f"layout: unknown concept {args.root!r}")
            depth = args.depth if args.depth is not None else max(1, full.depth())
            tree = store.subtree(args.root, depth)
            cloud = store.cloud_of(vocab.resource_iri(tree.root))
            scene = layout_mod.layout_map(tree, cloud, params, args.now)
    except (model.TagError, rdfxml.ValidationError) as exc:
        return _fail(EXIT_DATA, f"layout: {exc}")
    except layout_mod.LayoutError as exc:
        return _fail(EXIT_DATA, f"layout: {exc}")
    if args.format == "json":
        sys.stdout.write(layout_mod.render_scene_json(scene))
    else:
        sys.stdout.write(layout_mod.render_scene_flat(scene))
    return EXIT_OK


# -- parser ----------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="scotcloud", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("serve", help="run the annotation server")
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--store", default=None, help="snapshot directory to load and persist")
    p.add_argument("--config", default=None, help="key=value config file")
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("tag", help="attach a tag to a resource")
    p.add_argument("--resource", required=True)
    p.add_argument("--tag", required=True)
    p.add_argument("--tagger", default=str(CLI_TAGGER))
    p.add_argument("--url", default=None)
    p.set_defaults(func=_cmd_tag)

    p = sub.add_parser("cloud", help="fetch a resource's tag cloud as RDF/XML")
    p.add_argument("--resource", required=True)
    p.add_argument("--url", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_cloud)

    p = sub.add_parser("map", help="fetch a topic map as tree text")
    p.add_argument("--root", required=True)
    p.add_argument("--depth", type=int, default=1)
    p.add_argument("--url", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_map)

    p = sub.add_parser("attach", help="bind a child concept under a parent")
    p.add_argument("--parent", required=True)
    p.add_argument("--child", required=True)
    p.add_argument("--tagger", default=str(CLI_TAGGER))
    p.add_argument("--url", default=None)
    p.set_defaults(func=_cmd_attach)

    p = sub.add_parser("export", help="download the full store as one RDF/XML document")
    p.add_argument("--url", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_export)

    p = sub.add_parser("import", help="rebuild a store directory from an exported document")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--store", required=True)
    p.set_defaults(func=_cmd_import)

    p = sub.add_parser("simulate", help="replay a bot script through the client simulator")
    p.add_argument("--script", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--units", type=int, default=1)
    p.add_argument("--base-latency", type=int, default=50)
    p.add_argument("--jitter", type=int, default=0)
    p.add_argument("--window-mode", choices=("sliding", "fixed"), default="sliding")
    p.add_argument("--store", default=None, help="seed the in-process server from this snapshot")
    p.add_argument("--url", default=None, help="wire mode: talk to a live server instead")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("layout", help="emit a scene description for a cloud or topic map")
    p.add_argument("--store", default=None)
    p.add_argument("--resource", default=None)
    p.add_argument("--root", default=None)
    p.add_argument("--depth", type=int, default=None)
    p.add_argument("--now", type=int, default=0, help="scene creation instant in ms")
    p.add_argument("--format", choices=("flat", "json"), default="flat")
    p.set_defaults(func=_cmd_layout)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except requests.exceptions.ConnectionError:
        return _fail(EXIT_PROTOCOL, f"cannot reach server at {_server_url(args)}")
    except KeyboardInterrupt:
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
