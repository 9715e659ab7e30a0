"""Versioned JSON schemas shipped with the package."""
from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources

import jsonschema

from ..errors import InvalidInputError

NAMES = ("report", "comparison", "metrics")


@lru_cache(maxsize=None)
def load_schema(name: str) -> dict:
    if name not in NAMES:
        raise InvalidInputError(f"unknown schema {name!r}")
    text = resources.files("wioc.schemas").joinpath(f"{name}.schema.json").read_text()
    return json.loads(text)


def validate(obj, name: str) -> None:
    """Raise :class:`InvalidInputError` unless ``obj`` matches the named schema."""
    try:
        jsonschema.validate(obj, load_schema(name))
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path)
        raise InvalidInputError(f"{name} schema violation at /{path}: {exc.message}") from None
