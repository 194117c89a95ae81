from importlib import resources
from pathlib import Path

from .graph import (
    DEFAULT_TYPE_RULES,
    ENTITY_TYPES,
    RELATIONS,
    AmbiguousLabelError,
    Entity,
    KGIntegrityError,
    KnowledgeGraph,
    Triple,
    build_kg,
    eigenvector_centrality,
    kg_stats,
    load_aliases,
    load_kg,
    map_crime_labels,
    save_kg,
)
from .wiki import (
    DEFAULT_BLOCKLIST,
    DEFAULT_SEEDS,
    FetchReport,
    FilterResult,
    WikiFetcher,
    WikiPage,
    dump_pages,
    fetch_wiki_metadata,
    filter_and_expand,
    load_pages,
)


def data_dir() -> Path:
    return Path(str(resources.files(__package__) / "data"))


def snapshot_dir() -> Path:
    return data_dir() / "snapshot"


def load_snapshot() -> KnowledgeGraph:
    """The bundled CrimeKG snapshot (network-free, deterministic)."""
    return load_kg(snapshot_dir())


def load_type_overrides(path=None) -> dict[str, str]:
    path = Path(path) if path else data_dir() / "type_overrides.tsv"
    out = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        title, etype = line.split("\t")
        out[title.strip()] = etype.strip()
    return out


def default_aliases() -> dict[str, str]:
    return load_aliases(snapshot_dir() / "aliases.tsv")

__all__ = [
    "AmbiguousLabelError",
    "build_kg",
    "data_dir",
    "default_aliases",
    "DEFAULT_BLOCKLIST",
    "DEFAULT_SEEDS",
    "DEFAULT_TYPE_RULES",
    "dump_pages",
    "eigenvector_centrality",
    "Entity",
    "ENTITY_TYPES",
    "fetch_wiki_metadata",
    "FetchReport",
    "filter_and_expand",
    "FilterResult",
    "kg_stats",
    "KGIntegrityError",
    "KnowledgeGraph",
    "load_aliases",
    "load_kg",
    "load_pages",
    "load_snapshot",
    "load_type_overrides",
    "map_crime_labels",
    "RELATIONS",
    "save_kg",
    "snapshot_dir",
    "Triple",
    "WikiFetcher",
    "WikiPage",
]
