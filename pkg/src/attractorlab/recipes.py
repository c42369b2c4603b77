"""Construction recipes: canonical serialization, hashing, rebuilding.

A recipe is a tree.  Leaves name base systems, interior nodes name
constructions applied to child systems.  The canonical text rendering is
deterministic, so its SHA-256 prefix serves as a content address: equal
hashes mean equal construction parameters.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from .textdoc import Document, DocumentError, format_float, parse_document

__all__ = [
    "Recipe",
    "atomic_recipe",
    "recipe_document",
    "recipe_hash",
    "parse_recipe",
    "build_recipe",
    "register_builder",
]


@dataclass(frozen=True)
class Recipe:
    """One construction step: an operation name, parameters, child recipes."""

    op: str
    params: tuple = field(default_factory=tuple)  # sorted (key, value) pairs
    children: tuple = field(default_factory=tuple)

    def param(self, key, default=None):
        for k, v in self.params:
            if k == key:
                return v
        return default


def atomic_recipe(op: str, **params) -> Recipe:
    return Recipe(op=op, params=tuple(sorted(params.items())), children=())


def derived_recipe(op: str, children, **params) -> Recipe:
    return Recipe(op=op, params=tuple(sorted(params.items())), children=tuple(children))


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return format_float(v)
    if isinstance(v, int):
        return str(v)
    if isinstance(v, str):
        return v
    if isinstance(v, (list, tuple)):
        return ", ".join(_format_value(x) for x in v)
    raise TypeError(f"recipe parameter of unsupported type {type(v).__name__}")


def _parse_value(raw: str):
    """Typed round-trip of _format_value output."""
    raw = raw.strip()
    if "," in raw:
        return tuple(_parse_value(p) for p in raw.split(","))
    if raw == "true":
        return True
    if raw == "false":
        return False
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    return raw


def _emit(node: Recipe, label: str, doc: Document) -> None:
    sec = doc.add(label)
    sec.set("op", node.op)
    sec.set("children", str(len(node.children)))
    for k, v in node.params:
        sec.set(f"p.{k}", _format_value(v))
    for i, child in enumerate(node.children):
        _emit(child, f"{label}.{i}", doc)


def recipe_document(node: Recipe) -> str:
    doc = Document()
    _emit(node, "recipe", doc)
    return doc.render()


def recipe_hash(node: Recipe) -> str:
    digest = hashlib.sha256(recipe_document(node).encode("utf-8")).hexdigest()
    return digest[:16]


def _collect(doc: Document, label: str) -> Recipe:
    sec = doc.get(label)
    op = sec.get("op")
    n_children = int(sec.get("children"))
    params = []
    for k, v in sec.items():
        if k.startswith("p."):
            params.append((k[2:], _parse_value(v)))
    children = tuple(_collect(doc, f"{label}.{i}") for i in range(n_children))
    return Recipe(op=op, params=tuple(sorted(params)), children=children)


def parse_recipe(text: str) -> Recipe:
    doc = parse_document(text)
    if "recipe" not in doc:
        raise DocumentError("recipe document must contain a [recipe] section")
    node = _collect(doc, "recipe")
    rendered = recipe_document(node)
    reparsed = parse_document(rendered)
    got = {s.name for s in parse_document(text).sections()}
    expect = {s.name for s in reparsed.sections()}
    if got != expect:
        extra = sorted(got - expect)
        raise DocumentError(f"recipe document has unreachable sections: {extra}")
    return node


_BUILDERS: dict[str, object] = {}


def register_builder(op: str, fn) -> None:
    _BUILDERS[op] = fn


def build_recipe(node: Recipe):
    """Rebuild the system a recipe describes.  Builders self-register."""
    if node.op not in _BUILDERS:
        raise DocumentError(f"no registered builder for operation '{node.op}'")
    return _BUILDERS[node.op](node)
