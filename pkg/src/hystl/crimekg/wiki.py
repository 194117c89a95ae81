"""Wikimedia REST metadata crawler with an on-disk cache, and page filtering."""
from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
import urllib.error
import urllib.parse
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping

logger = logging.getLogger(__name__)

DEFAULT_SEEDS = ("crime", "theft", "felony", "criminal law", "offense")
DEFAULT_ENDPOINT = "https://en.wikipedia.org/api/rest_v1"
DEFAULT_BLOCKLIST = ("film", "album", "TV series", "television series", "song", "novel", "video game", "band")
CACHE_ENV = "HYSTL_WIKI_CACHE"

# transport(url) -> (status, payload); payload is None unless status == 200
Transport = Callable[[str], tuple[int, dict | None]]


@dataclass
class WikiPage:
    title: str
    page_id: int | None = None
    lang: str = "en"
    description: str = ""
    links: list[str] = field(default_factory=list)


@dataclass
class FetchReport:
    network_calls: int = 0
    cache_hits: int = 0
    failed: dict[str, str] = field(default_factory=dict)


def cache_key(title: str) -> str:
    return hashlib.sha256(title.encode("utf-8")).hexdigest()[:32] + ".json"


def default_cache_dir() -> Path:
    return Path(os.environ.get(CACHE_ENV, Path.home() / ".cache" / "hystl" / "wiki"))


def urllib_transport(url: str, timeout: float = 20.0) -> tuple[int, dict | None]:
    req = urllib.request.Request(url, headers={"User-Agent": "hystl-crimekg/0.1 (research crawler)"})
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            return resp.status, json.loads(resp.read().decode("utf-8"))
    except urllib.error.HTTPError as exc:
        return exc.code, None


class _RateLimiter:
    def __init__(self, delay: float):
        self.delay = delay
        self._lock = threading.Lock()
        self._last = 0.0

    def wait(self) -> None:
        if self.delay <= 0:
            return
        with self._lock:
            gap = self._last + self.delay - time.monotonic()
            if gap > 0:
                time.sleep(gap)
            self._last = time.monotonic()


class WikiFetcher:
    def __init__(self, endpoint: str = DEFAULT_ENDPOINT, cache_dir: str | Path | None = None,
                 transport: Transport | None = None, offline: bool = False, delay: float = 0.2,
                 retries: int = 3, backoff: float = 0.5, concurrency: int = 2):
        self.endpoint = endpoint.rstrip("/")
        self.cache_dir = Path(cache_dir) if cache_dir else default_cache_dir()
        self.transport = transport or urllib_transport
        self.offline = offline
        self.retries = retries
        self.backoff = backoff
        self.concurrency = max(1, concurrency)
        self._limiter = _RateLimiter(delay)
        self._lock = threading.Lock()
        self.report = FetchReport()

    def _cache_path(self, title: str) -> Path:
        return self.cache_dir / cache_key(title)

    def _get(self, url: str) -> tuple[int, dict | None]:
        status, payload = 0, None
        for attempt in range(self.retries + 1):
            self._limiter.wait()
            with self._lock:
                self.report.network_calls += 1
            try:
                status, payload = self.transport(url)
            except (OSError, ValueError) as exc:
                logger.warning("request failed (%s): %s", url, exc)
                status, payload = 0, None
            if status == 200 or status in (400, 403, 404):
                return status, payload
            time.sleep(self.backoff * (2 ** attempt))
        return status, payload

    def fetch_page(self, title: str) -> WikiPage | None:
        path = self._cache_path(title)
        if path.exists():
            with self._lock:
                self.report.cache_hits += 1
            record = json.loads(path.read_text(encoding="utf-8"))
        else:
            if self.offline:
                with self._lock:
                    self.report.failed[title] = "not cached (offline)"
                return None
            quoted = urllib.parse.quote(title.replace(" ", "_"), safe="")
            status, summary = self._get(f"{self.endpoint}/page/summary/{quoted}")
            if status != 200 or summary is None:
                record = {"title": title, "status": status}
            else:
                rstatus, related = self._get(f"{self.endpoint}/page/related/{quoted}")
                links = [p.get("title", "").replace("_", " ") for p in (related or {}).get("pages", [])]
                record = {
                    "title": title,
                    "status": 200,
                    "page_id": summary.get("pageid"),
                    "lang": summary.get("lang", "en"),
                    "description": summary.get("description", "") or "",
                    "links": [l for l in links if l],
                }
            self.cache_dir.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps(record, sort_keys=True), encoding="utf-8")
        if record.get("status") != 200:
            with self._lock:
                self.report.failed[title] = f"HTTP {record.get('status')}"
            return None
        return WikiPage(record["title"], record.get("page_id"), record.get("lang", "en"),
                        record.get("description", ""), list(record.get("links", [])))

    def crawl(self, seeds: Iterable[str], depth: int) -> dict[str, WikiPage]:
        pages: dict[str, WikiPage] = {}
        frontier = sorted(set(seeds))
        visited: set[str] = set()
        for level in range(depth + 1):
            todo = [t for t in frontier if t not in visited]
            visited.update(todo)
            with ThreadPoolExecutor(max_workers=self.concurrency) as pool:
                fetched = list(pool.map(self.fetch_page, todo))
            nxt = set()
            for title, page in zip(todo, fetched):
                if page is None:
                    continue
                pages[title] = page
                if level < depth:
                    nxt.update(page.links)
            frontier = sorted(nxt - visited)
        return dict(sorted(pages.items()))


def fetch_wiki_metadata(seeds: Iterable[str] = DEFAULT_SEEDS, depth: int = 1,
                        endpoint: str = DEFAULT_ENDPOINT, cache_dir: str | Path | None = None,
                        **kwargs) -> tuple[dict[str, WikiPage], FetchReport]:
    """Breadth-first crawl of page summaries and related-page links.

    Every response (including failures) is cached as one JSON file per
    title, so a repeated crawl over the same frontier touches no network.
    """
    fetcher = WikiFetcher(endpoint, cache_dir, **kwargs)
    pages = fetcher.crawl(seeds, depth)
    return pages, fetcher.report


@dataclass
class FilterResult:
    pages: dict[str, WikiPage]
    removed: list[str]
    review: list[str]


def filter_and_expand(pages: Mapping[str, WikiPage], blocklist: Iterable[str] = DEFAULT_BLOCKLIST,
                      max_degree: int | None = None, keywords: Iterable[str] | None = None) -> FilterResult:
    """Drop blocklisted or (when ``keywords`` is given) irrelevant pages.

    Pages whose link count exceeds ``max_degree`` are listed for manual
    review but kept.
    """
    block = [b.casefold() for b in blocklist if b]
    keys = [k.casefold() for k in keywords] if keywords else None
    kept, removed, review = {}, [], []
    for title, page in pages.items():
        text = f"{page.title} {page.description}".casefold()
        if any(b in text for b in block):
            removed.append(title)
            continue
        if keys is not None and not any(k in text for k in keys):
            removed.append(title)
            continue
        kept[title] = page
        if max_degree is not None and len(page.links) > max_degree:
            review.append(title)
    if removed:
        logger.info("filter_and_expand: removed %d pages", len(removed))
    if review:
        logger.info("filter_and_expand: %d hub pages flagged for review", len(review))
    return FilterResult(kept, removed, review)


def load_pages(path: str | Path) -> dict[str, WikiPage]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return {p["title"]: WikiPage(**p) for p in data}


def dump_pages(pages: Mapping[str, WikiPage], path: str | Path) -> None:
    Path(path).write_text(json.dumps([asdict(p) for p in pages.values()], indent=1) + "\n", encoding="utf-8")
