"""Enrichment command templating and the prompt response cache.

The engine never calls a language model itself; it only builds the commands,
caches responses produced offline, and assembles augmented item text that
falls back to the bare title when no response exists.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError, ParseError

PROMPT_TEMPLATE = (
    "Generate additional contextual information for an item which is type of "
    "{domain} with {title}. Provide detailed insights and keywords about the "
    "item's features. The output should include specific attributes, and "
    "potential users that could enhance the understanding of the item in a "
    "cross-domain recommendation context."
)


def template_hash() -> str:
    return hashlib.sha256(PROMPT_TEMPLATE.encode("utf-8")).hexdigest()[:12]


@dataclass
class PromptRecord:
    item_id: str
    command: str
    response: str | None
    provider: str
    created_at: float
    template_hash: str

    def key(self) -> tuple[str, str, str]:
        return (self.item_id, self.template_hash, self.provider)


def build_prompt(item: tuple[str, str, str]) -> str:
    """Instantiate the enrichment command for (item_id, domain, title)."""
    _, domain, title = item
    if not title or not title.strip():
        raise ConfigError(f"item {item[0]!r} has an empty title")
    return PROMPT_TEMPLATE.format(domain=domain, title=title)


def assemble_augmented_text(item: tuple[str, str, str],
                            response: str | None = None) -> str:
    """Title plus the cached response; just the title when none exists."""
    title = item[2]
    if response is None or not response.strip():
        return title
    return f"{title}. {response.strip()}"


def make_record(item: tuple[str, str, str], provider: str = "none",
                created_at: float | None = None) -> PromptRecord:
    return PromptRecord(
        item_id=item[0],
        command=build_prompt(item),
        response=None,
        provider=provider,
        created_at=time.time() if created_at is None else created_at,
        template_hash=template_hash(),
    )


def write_cache(records: list[PromptRecord], path: str | Path) -> None:
    """JSON-lines cache, one record per line, stable field order."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps({
                "item_id": r.item_id,
                "command": r.command,
                "response": r.response,
                "provider": r.provider,
                "created_at": r.created_at,
                "template_hash": r.template_hash,
            }) + "\n")


def read_cache(path: str | Path) -> list[PromptRecord]:
    """Read the cache; the last record per (item, template, provider) wins.
    Unknown fields are tolerated so other writers can extend records."""
    by_key: dict[tuple[str, str, str], PromptRecord] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}: line {lineno}: bad JSON ({exc})") from None
            try:
                rec = PromptRecord(
                    item_id=obj["item_id"],
                    command=obj["command"],
                    response=obj.get("response"),
                    provider=obj.get("provider", "none"),
                    created_at=float(obj.get("created_at", 0.0)),
                    template_hash=obj.get("template_hash", template_hash()),
                )
            except KeyError as exc:
                raise ParseError(f"{path}: line {lineno}: missing field {exc}") from None
            by_key[rec.key()] = rec
    return list(by_key.values())


def responses_by_item(records: list[PromptRecord]) -> dict[str, str]:
    """item_id -> response for records that have one (current template only)."""
    th = template_hash()
    return {r.item_id: r.response for r in records
            if r.response is not None and r.template_hash == th}
