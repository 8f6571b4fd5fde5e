"""Fill prompt-cache responses through a provider, with retries.

Existing responses are never overwritten, so enrichment is idempotent on a
completed cache; records whose provider keeps failing are left unfilled
(attempt counters updated) and the job reports partial completion.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass

from . import AdapterError
from .formats import read_cache, write_cache

_DESCRIPTORS = ("practical", "popular", "versatile", "classic", "niche",
                "premium", "budget-friendly", "seasonal")


def _title_from_command(command: str) -> str:
    """The engine's command template embeds the title between fixed anchors."""
    if " with " in command and ". Provide detailed insights" in command:
        return command.split(" with ", 1)[1].split(". Provide detailed insights", 1)[0]
    return command[:40]


class MockProvider:
    """Deterministic keyword summary derived from the item title."""

    name = "mock"

    def generate(self, command: str) -> str:
        title = _title_from_command(command)
        tokens = [t.lower().strip(".,") for t in title.split() if t]
        pick = int(hashlib.sha256(title.encode()).hexdigest(), 16)
        adjectives = [_DESCRIPTORS[pick % len(_DESCRIPTORS)],
                      _DESCRIPTORS[(pick // 8) % len(_DESCRIPTORS)]]
        return (f"keywords: {' '.join(tokens)}; attributes: {', '.join(adjectives)}; "
                f"potential users: cross-domain shoppers interested in {tokens[-1]}")


@dataclass
class RetryPolicy:
    max_attempts: int = 3
    backoff_base: float = 0.05  # seconds; doubles per retry

    def delays(self):
        for attempt in range(self.max_attempts):
            yield self.backoff_base * (2 ** attempt) if attempt else 0.0


@dataclass
class EnrichResult:
    filled: int
    skipped: int  # already had responses
    failed: int

    @property
    def complete(self) -> bool:
        return self.failed == 0


def make_provider(name: str):
    if name == "mock":
        return MockProvider()
    raise AdapterError(f"unknown provider {name!r}")


def enrich_with_llm(cache_path: str, provider, policy: RetryPolicy | None = None,
                    sleep=time.sleep) -> EnrichResult:
    """Fill every response-less record in place (cache rewritten once)."""
    policy = policy or RetryPolicy()
    records = read_cache(cache_path)
    filled = skipped = failed = 0
    for rec in records:
        if rec.get("response"):
            skipped += 1
            continue
        done = False
        for delay in policy.delays():
            if delay:
                sleep(delay)
            rec["attempts"] = rec.get("attempts", 0) + 1
            try:
                rec["response"] = provider.generate(rec["command"])
                rec["provider"] = getattr(provider, "name", "unknown")
                done = True
                break
            except Exception:
                continue
        if done:
            filled += 1
        else:
            failed += 1  # left unfilled; the job continues
    write_cache(records, cache_path)
    return EnrichResult(filled=filled, skipped=skipped, failed=failed)
