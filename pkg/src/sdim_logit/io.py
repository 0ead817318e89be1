"""Shared file helpers: versioned JSON documents and parse errors."""
from __future__ import annotations

import json
import os
from pathlib import Path

FORMAT_VERSION = 1


class FormatError(ValueError):
    """Malformed artifact file; carries the offending line when known."""

    def __init__(self, message: str, path=None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class SchemaVersionError(FormatError):
    pass


def dump_json(obj, path: os.PathLike | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(obj, indent=2, allow_nan=False) + "\n"
    path.write_text(text, encoding="utf-8")


def load_json(path: os.PathLike | str, kind: str | None = None) -> dict:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc.msg}", path, exc.lineno) from None
    if not isinstance(doc, dict):
        raise FormatError("top-level JSON value must be an object", path)
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise SchemaVersionError(
            f"unsupported format_version {version!r} (this reader understands {FORMAT_VERSION})", path
        )
    if kind is not None and doc.get("kind", kind) != kind:
        raise FormatError(f"expected a {kind!r} document, found {doc.get('kind')!r}", path)
    return doc
