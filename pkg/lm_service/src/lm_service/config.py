"""Service configuration: model checkpoints, the restricted vocabulary, and
serving options."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path


@dataclass(frozen=True)
class ServiceConfig:
    causal_model: str
    masked_model: str
    vocab_file: str
    port: int = 8901
    max_batch: int = 64

    @classmethod
    def from_file(cls, path: str | Path) -> "ServiceConfig":
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        return cls(**doc)

    @classmethod
    def from_env(cls) -> "ServiceConfig":
        path = os.environ.get("LM_SERVICE_CONFIG")
        if path:
            return cls.from_file(path)
        return cls(
            causal_model=os.environ["LM_SERVICE_CAUSAL"],
            masked_model=os.environ["LM_SERVICE_MASKED"],
            vocab_file=os.environ["LM_SERVICE_VOCAB"],
            port=int(os.environ.get("LM_SERVICE_PORT", "8901")),
            max_batch=int(os.environ.get("LM_SERVICE_MAX_BATCH", "64")),
        )


def load_restricted_vocab(path: str | Path) -> list[str]:
    """Words of the restricted vocabulary, lexicographically sorted.

    Accepts either the tab-separated ``word<TAB>count`` format or the JSON
    array of ``{word, freq}`` records used by the analysis toolkit.
    """
    text = Path(path).read_text(encoding="utf-8")
    words: set[str] = set()
    if text.lstrip().startswith("["):
        for row in json.loads(text):
            words.add(row["word"].lower())
    else:
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if not parts[0].strip():
                raise ValueError(f"{path}:{lineno}: empty word")
            words.add(parts[0].strip().lower())
    if not words:
        raise ValueError(f"no vocabulary entries in {path}")
    return sorted(words)
