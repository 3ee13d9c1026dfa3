import threading
import uuid

import pytest

from scotcloud.model import VocabConfig
from scotcloud.service import AnnotationService, ServiceConfig, make_http_server

TAGGER = uuid.UUID("12345678-1234-5678-1234-567812345678")

MOUSE_TAGS = ["scroll", "optical", "informatics", "components", "peripheral"]


def seed_mouse(service: AnnotationService) -> None:
    """One tag each of the five words, laser three times."""
    for tag in MOUSE_TAGS:
        response = service.handle_url(f"/tag?resource=mouse&tag={tag}&tagger={TAGGER}")
        assert response.status == 200
    for _ in range(3):
        response = service.handle_url(f"/tag?resource=mouse&tag=laser&tagger={TAGGER}")
        assert response.status == 200


def fetch_full(service: AnnotationService, operation: str, params: dict) -> bytes:
    """Walk every page of an in-process response and concatenate payloads."""
    from scotcloud.service import ApiRequest

    first = service.handle(ApiRequest(operation, params)).page
    chunks = [first.payload]
    for i in range(1, first.total):
        chunks.append(service.handle(ApiRequest(operation, params, page=i)).page.payload)
    return b"".join(chunks)


def store_state(store):
    """Comparable view of a store: cloud counts plus topic-map edges."""
    clouds = {str(r): dict(c.frequencies) for r, c in store.clouds.items()}
    maps = {root: dict(tree.parent) for root, tree in store.maps.items()}
    return clouds, maps


@pytest.fixture
def vocab():
    return VocabConfig()


@pytest.fixture
def service():
    return AnnotationService()


@pytest.fixture
def live_server():
    svc = AnnotationService(ServiceConfig(port=0))
    server = make_http_server(svc)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    url = f"http://127.0.0.1:{server.server_address[1]}"
    yield url, svc
    server.shutdown()
    server.server_close()
