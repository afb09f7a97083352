"""Prompt sets: which texts get encoded under which fixture keys.

All six built-in expressions share one phrasing template, "A person who
is {X}". The raise_brow wording is the reference instance of the family;
the other five are filled-in variants of the same template.

Each expression is emitted under both a "basis:" and a "text:" key with
the same prompt: downstream, the expression subspace is spanned by the
prompt embeddings themselves, so a fixture holding both kinds of keys is
directly usable without further editing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .errors import PromptSetError

EXPRESSION_PROMPTS = (
    ("smile", "A person who is smiling"),
    ("angry", "A person who is angry"),
    ("sad", "A person who is sad"),
    ("close_eyes", "A person who is closing eyes"),
    ("raise_brow", "A person who is raising brow"),
    ("frown_brow", "A person who is frowning brow"),
)

DEFAULT_D_E = 512


def builtin_entries() -> tuple:
    entries = []
    for name, prompt in EXPRESSION_PROMPTS:
        entries.append((f"basis:{name}", prompt))
        entries.append((f"text:{name}", prompt))
    return tuple(entries)


@dataclass(frozen=True)
class PromptSet:
    """(key, prompt) pairs plus the fixture header they should produce.

    Keys must be unique and nonempty; prompts must be nonempty strings.
    d_e is the width the encoder is expected to deliver; the export step
    refuses to write a fixture whose header would disagree with the
    vectors in it.
    """

    entries: tuple
    d_e: int = DEFAULT_D_E
    normalized: bool = True

    def __post_init__(self):
        object.__setattr__(self, "entries",
                           tuple((k, p) for k, p in self.entries))
        if not self.entries:
            raise PromptSetError("prompt set is empty")
        seen = set()
        for key, prompt in self.entries:
            if not isinstance(key, str) or not key:
                raise PromptSetError(f"bad key {key!r}: need a nonempty string")
            if key in seen:
                raise PromptSetError(f"duplicate key {key!r}")
            seen.add(key)
            if not isinstance(prompt, str) or not prompt.strip():
                raise PromptSetError(
                    f"key {key!r}: prompt must be a nonempty string, "
                    f"got {prompt!r}")
        if not isinstance(self.d_e, int) or self.d_e <= 0:
            raise PromptSetError(
                f"d_e must be a positive integer, got {self.d_e!r}")

    def keys(self) -> list:
        return [k for k, _ in self.entries]


def default_prompt_set(d_e: int = DEFAULT_D_E) -> PromptSet:
    return PromptSet(entries=builtin_entries(), d_e=d_e)


def _pairs_rejecting_duplicates(pairs):
    # json.load silently keeps the last value for a repeated key, so
    # duplicate detection has to happen at parse time.
    seen = set()
    for key, _ in pairs:
        if key in seen:
            raise PromptSetError(f"duplicate key {key!r} in prompts file")
        seen.add(key)
    return dict(pairs)


def load_prompt_file(path) -> tuple:
    """Read a prompts JSON file; returns (entries tuple, d_e or None).

    Format: {"prompts": {"text:calm": "A person who is calm", ...},
    "d_e": 512}. The d_e field is optional.
    """
    try:
        with open(path) as fh:
            doc = json.load(fh, object_pairs_hook=_pairs_rejecting_duplicates)
    except json.JSONDecodeError as exc:
        raise PromptSetError(
            f"{path}: not valid JSON (line {exc.lineno} col {exc.colno}: "
            f"{exc.msg})") from exc
    if not isinstance(doc, dict):
        raise PromptSetError(f"{path}: prompts document must be a JSON object")
    if "prompts" not in doc:
        raise PromptSetError(f"{path}: missing field 'prompts'")
    prompts = doc["prompts"]
    if not isinstance(prompts, dict):
        raise PromptSetError(f"{path}: 'prompts' must map keys to texts")
    d_e = doc.get("d_e")
    if d_e is not None and (not isinstance(d_e, int) or d_e <= 0):
        raise PromptSetError(
            f"{path}: d_e must be a positive integer, got {d_e!r}")
    unknown = set(doc) - {"prompts", "d_e"}
    if unknown:
        raise PromptSetError(
            f"{path}: unknown fields {sorted(unknown)}")
    return tuple(prompts.items()), d_e


def merged_prompt_set(extra_entries=(), d_e: int | None = None) -> PromptSet:
    """Built-in expressions plus any user entries; key collisions are
    rejected by the PromptSet constructor."""
    return PromptSet(entries=builtin_entries() + tuple(extra_entries),
                     d_e=DEFAULT_D_E if d_e is None else d_e)
