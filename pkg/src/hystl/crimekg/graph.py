"""CrimeKG entities, triples, persistence, statistics and label mapping."""
from __future__ import annotations

import csv
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

ENTITY_TYPES = ("crime_type", "legal_code", "object", "other")
RELATIONS = ("relatedTo", "definedBy")

# first matching rule wins; (field, pattern, entity_type)
DEFAULT_TYPE_RULES: tuple[tuple[str, str, str], ...] = (
    ("title", r"\b(Act|Code|Law|Statute)\b", "legal_code"),
    ("description", r"\b(crime|offen[cs]e|felony|misdemeanou?r)\b", "crime_type"),
    ("description", r"\b(weapon|tool|device|vehicle|object|item|instrument|implement|card|gun|firearm)s?\b", "object"),
)


class KGIntegrityError(ValueError):
    """A loaded or built KG violates one of its invariants."""


class AmbiguousLabelError(ValueError):
    pass


@dataclass(frozen=True)
class Entity:
    id: int
    label: str
    entity_type: str
    description: str = ""
    source_page_id: str | None = None


@dataclass(frozen=True, order=True)
class Triple:
    head: int
    relation: str
    tail: int


@dataclass
class KnowledgeGraph:
    entities: list[Entity]
    triples: list[Triple]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    @property
    def relations(self) -> set[str]:
        return {t.relation for t in self.triples}

    def validate(self) -> None:
        for i, e in enumerate(self.entities):
            if e.id != i:
                raise KGIntegrityError(f"entity ids must be dense and ordered: position {i} has id {e.id}")
            if not e.label:
                raise KGIntegrityError(f"entity {e.id} has an empty label")
            if e.entity_type not in ENTITY_TYPES:
                raise KGIntegrityError(f"entity {e.id} has unknown type {e.entity_type!r}")
        n = len(self.entities)
        seen = set()
        for t in self.triples:
            if t.relation not in RELATIONS:
                raise KGIntegrityError(f"unknown relation {t.relation!r}")
            if not (0 <= t.head < n and 0 <= t.tail < n):
                raise KGIntegrityError(f"dangling triple endpoint in {t}")
            if t.head == t.tail:
                raise KGIntegrityError(f"self-loop triple {t}")
            if t in seen:
                raise KGIntegrityError(f"duplicate triple {t}")
            seen.add(t)

    def by_label(self, label: str) -> Entity:
        for e in self.entities:
            if e.label == label:
                return e
        raise KeyError(label)

    def types(self) -> list[str]:
        return [e.entity_type for e in self.entities]

    def undirected_edges(self) -> set[tuple[int, int]]:
        return {(min(t.head, t.tail), max(t.head, t.tail)) for t in self.triples}

    def neighbours(self) -> list[list[int]]:
        """Sorted undirected neighbour lists, relation-agnostic."""
        nbrs: list[set[int]] = [set() for _ in self.entities]
        for i, j in self.undirected_edges():
            nbrs[i].add(j)
            nbrs[j].add(i)
        return [sorted(s) for s in nbrs]

    def adjacency(self) -> np.ndarray:
        n = len(self.entities)
        A = np.zeros((n, n))
        for i, j in self.undirected_edges():
            A[i, j] = A[j, i] = 1.0
        return A

    def canonical(self) -> tuple[list[Entity], list[Triple]]:
        return sorted(self.entities, key=lambda e: e.id), sorted(self.triples)


def build_kg(pages: Mapping[str, "object"] | Iterable, type_rules: Sequence = DEFAULT_TYPE_RULES,
             overrides: Mapping[str, str] | None = None) -> KnowledgeGraph:
    """Turn page metadata into entities and triples.

    ``pages`` maps titles to objects with ``title``, ``page_id``,
    ``description`` and ``links`` attributes (or equivalent dict keys).
    Links between retained pages become ``relatedTo`` triples, except
    crime-type/legal-code links, which become ``definedBy`` (crime -> code).
    Each unordered pair yields at most one triple; isolated pages are dropped.
    """
    if isinstance(pages, Mapping):
        items = list(pages.values())
    else:
        items = list(pages)
    overrides = dict(overrides or {})

    def attr(p, key, default=None):
        return p.get(key, default) if isinstance(p, Mapping) else getattr(p, key, default)

    by_title = {attr(p, "title"): p for p in items}
    titles = sorted(by_title)
    etype = {t: overrides.get(t) or _apply_rules(t, attr(by_title[t], "description", "") or "", type_rules)
             for t in titles}

    pair_rel: dict[tuple[str, str], tuple[str, str, str]] = {}
    for t in titles:
        for link in attr(by_title[t], "links", []) or []:
            if link not in by_title or link == t:
                continue
            key = (min(t, link), max(t, link))
            a, b = etype[t], etype[link]
            if {a, b} == {"crime_type", "legal_code"}:
                crime, code = (t, link) if a == "crime_type" else (link, t)
                pair_rel[key] = (crime, "definedBy", code)
            elif key not in pair_rel:
                pair_rel[key] = (key[0], "relatedTo", key[1])

    connected = sorted({x for k in pair_rel for x in k})
    dropped = len(titles) - len(connected)
    if dropped:
        logger.info("build_kg: pruned %d isolated pages", dropped)
    ids = {t: i for i, t in enumerate(connected)}
    entities = [
        Entity(ids[t], t, etype[t], attr(by_title[t], "description", "") or "",
               None if attr(by_title[t], "page_id") is None else str(attr(by_title[t], "page_id")))
        for t in connected
    ]
    triples = sorted(Triple(ids[h], r, ids[tl]) for h, r, tl in pair_rel.values())
    return KnowledgeGraph(entities, triples)


def _apply_rules(title: str, description: str, rules: Sequence) -> str:
    for fieldname, pattern, etype in rules:
        text = title if fieldname == "title" else description
        if re.search(pattern, text, flags=0 if fieldname == "title" else re.IGNORECASE):
            return etype
    return "other"


# -- persistence --------------------------------------------------------------

ENTITY_COLUMNS = ("id", "label", "entity_type", "description", "source_page_id")
TRIPLE_COLUMNS = ("head_id", "relation", "tail_id")


def save_kg(kg: KnowledgeGraph, directory: str | Path, provenance: dict | None = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entities, triples = kg.canonical()
    with open(directory / "entities.tsv", "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, delimiter="\t", lineterminator="\n")
        w.writerow(ENTITY_COLUMNS)
        for e in entities:
            w.writerow([e.id, e.label, e.entity_type, e.description, e.source_page_id or ""])
    with open(directory / "triples.tsv", "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, delimiter="\t", lineterminator="\n")
        w.writerow(TRIPLE_COLUMNS)
        for t in triples:
            w.writerow([t.head, t.relation, t.tail])
    manifest = {
        "n_entities": len(entities),
        "n_triples": len(triples),
        "entity_type_counts": {k: sum(e.entity_type == k for e in entities) for k in ENTITY_TYPES},
        "relation_counts": {k: sum(t.relation == k for t in triples) for k in RELATIONS},
        "provenance": provenance if provenance is not None else kg.provenance,
    }
    (directory / "kg_manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_kg(directory: str | Path) -> KnowledgeGraph:
    directory = Path(directory)
    entities, triples = [], []
    with open(directory / "entities.tsv", encoding="utf-8", newline="") as f:
        rows = csv.reader(f, delimiter="\t")
        header = next(rows)
        if tuple(header[:4]) != ENTITY_COLUMNS[:4]:
            raise KGIntegrityError(f"entities.tsv header {header} unexpected")
        for row in rows:
            page = row[4] if len(row) > 4 and row[4] else None
            entities.append(Entity(int(row[0]), row[1], row[2], row[3], page))
    with open(directory / "triples.tsv", encoding="utf-8", newline="") as f:
        rows = csv.reader(f, delimiter="\t")
        next(rows)
        for row in rows:
            triples.append(Triple(int(row[0]), row[1], int(row[2])))
    manifest_path = directory / "kg_manifest.json"
    provenance = {}
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
        provenance = manifest.get("provenance", {})
        if manifest.get("n_entities") not in (None, len(entities)) or \
                manifest.get("n_triples") not in (None, len(triples)):
            raise KGIntegrityError("kg_manifest.json counts disagree with the TSV files")
    entities.sort(key=lambda e: e.id)
    return KnowledgeGraph(entities, sorted(triples), provenance)


# -- statistics ---------------------------------------------------------------

def eigenvector_centrality(A: np.ndarray, tol: float = 1e-10, max_iter: int = 10_000) -> tuple[np.ndarray, int]:
    """Power iteration on ``A + I`` (same eigenvectors as ``A``, no bipartite oscillation)."""
    n = A.shape[0]
    x = np.ones(n) / np.sqrt(n)
    for it in range(1, max_iter + 1):
        nxt = A @ x + x
        nxt /= np.linalg.norm(nxt)
        if np.abs(nxt - x).sum() < n * tol:
            return nxt, it
        x = nxt
    logger.warning("eigenvector centrality did not converge in %d iterations", max_iter)
    return x, max_iter


def _n_components(n: int, edges: Iterable[tuple[int, int]]) -> int:
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in edges:
        parent[find(i)] = find(j)
    return len({find(i) for i in range(n)})


def kg_stats(kg: KnowledgeGraph) -> dict:
    n = len(kg.entities)
    if n == 0:
        raise ValueError("empty knowledge graph")
    edges = kg.undirected_edges()
    centrality, iterations = eigenvector_centrality(kg.adjacency())
    components = _n_components(n, edges)
    return {
        "n_nodes": n,
        "n_edges": len(edges),
        "avg_degree": 2.0 * len(edges) / n,
        "avg_eigenvector_centrality": float(centrality.mean()),
        "power_iterations": iterations,
        "n_components": components,
        "disconnected": components > 1,
    }


# -- label mapping -----------------------------------------------------------

_STOP = {"of", "the", "and", "a", "an", "in", "to", "1st", "2nd", "3rd", "degree"}


def _tokens(text: str) -> frozenset[str]:
    toks = re.findall(r"[a-z0-9]+", text.lower())
    return frozenset(t[:-1] if len(t) > 3 and t.endswith("s") and not t.endswith("ss") else t
                     for t in toks if t not in _STOP)


def load_aliases(path: str | Path) -> dict[str, str]:
    """Read ``aliases.tsv`` (city_label, entity_label); '#' lines are comments."""
    out = {}
    with open(path, encoding="utf-8", newline="") as f:
        for row in csv.reader(f, delimiter="\t"):
            if not row or row[0].startswith("#") or row[0] == "city_label":
                continue
            out[row[0].strip()] = row[1].strip()
    return out


def map_crime_labels(city_labels: Iterable[str], kg: KnowledgeGraph,
                     alias_table: Mapping[str, str] | None = None) -> tuple[dict[str, int], list[str]]:
    """Resolve city crime labels to KG entity ids.

    Tried in order: case-insensitive exact label match, the alias table,
    then token-set containment against crime-type entities. Returns the
    mapping and the list of labels left unmapped.
    """
    folded: dict[str, list[Entity]] = {}
    for e in kg.entities:
        folded.setdefault(e.label.casefold(), []).append(e)
    aliases = {k.casefold(): v for k, v in (alias_table or {}).items()}
    crimes = [e for e in kg.entities if e.entity_type == "crime_type"]

    def exact(label: str) -> int | None:
        hits = folded.get(label.casefold(), [])
        if len(hits) > 1:
            raise AmbiguousLabelError(f"{label!r} matches several entities: {[e.label for e in hits]}")
        return hits[0].id if hits else None

    mapping, unmapped = {}, []
    for label in city_labels:
        found = exact(label)
        if found is None and label.casefold() in aliases:
            found = exact(aliases[label.casefold()])
            if found is None:
                raise KeyError(f"alias for {label!r} points at unknown entity {aliases[label.casefold()]!r}")
        if found is None:
            toks = _tokens(label)
            scored = [(len(_tokens(e.label)), e) for e in crimes if _tokens(e.label) and _tokens(e.label) <= toks]
            if scored:
                best = max(s for s, _ in scored)
                top = [e for s, e in scored if s == best]
                if len(top) > 1:
                    raise AmbiguousLabelError(f"{label!r} matches several entities: {[e.label for e in top]}")
                found = top[0].id
        if found is None:
            unmapped.append(label)
        else:
            mapping[label] = found
    return mapping, unmapped
