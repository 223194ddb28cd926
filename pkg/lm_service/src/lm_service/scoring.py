"""Model wrappers: constrained next-word scoring over a restricted
vocabulary and masked-fill probabilities.

Multi-subword vocabulary words are scored by the chain rule over their
subword pieces, then the whole restricted distribution is renormalized, so
the wire contract exposes proper word-level distributions regardless of the
checkpoint's tokenizer.
"""

from __future__ import annotations

import hashlib
import threading

import numpy as np
import torch
from torch.nn.functional import log_softmax

MASK_SENTINEL = "[MASK]"


class UnknownWordError(KeyError):
    def __init__(self, word: str):
        super().__init__(word)
        self.word = word


def _fingerprint(name: str, model) -> str:
    h = hashlib.sha256()
    h.update(str(name).encode())
    h.update(model.config.to_json_string().encode())
    first = next(model.parameters()).detach().cpu().numpy()
    h.update(first.tobytes()[:4096])
    return h.hexdigest()[:16]


def _uses_prefix_space(tokenizer) -> bool:
    """Byte-level BPE tokenizers (GPT-2 / RoBERTa style) distinguish
    word-initial and word-internal positions by a leading space."""
    name = type(tokenizer).__name__.lower()
    return "gpt2" in name or "roberta" in name or "bart" in name \
        or getattr(tokenizer, "add_prefix_space", None) is not None


class _TokenizerAdapter:
    def __init__(self, tokenizer):
        self.tokenizer = tokenizer
        self.prefix_space = _uses_prefix_space(tokenizer)

    def word_ids(self, word: str, sentence_initial: bool) -> list[int]:
        text = word
        if self.prefix_space and not sentence_initial:
            text = " " + word
        ids = self.tokenizer.encode(text, add_special_tokens=False)
        if not ids:
            raise UnknownWordError(word)
        return ids


class CausalScorer:
    """Next-word log-probabilities over the restricted vocabulary."""

    def __init__(self, model_name: str, vocab: list[str], max_batch: int = 64):
        from transformers import AutoModelForCausalLM, AutoTokenizer

        self.name = model_name
        self.vocab = list(vocab)
        self.vocab_index = {w: i for i, w in enumerate(self.vocab)}
        self.max_batch = max_batch
        self.tokenizer = AutoTokenizer.from_pretrained(model_name)
        self.model = AutoModelForCausalLM.from_pretrained(model_name)
        self.model.eval()
        self.adapter = _TokenizerAdapter(self.tokenizer)
        self.fingerprint = _fingerprint(model_name, self.model)
        self._lock = threading.Lock()
        self._cache: dict[tuple[str, ...], np.ndarray] = {}
        bos = self.tokenizer.bos_token_id
        if bos is None:
            bos = self.tokenizer.cls_token_id
        self.bos_id = bos

    def _context_ids(self, context: list[str]) -> list[int]:
        ids: list[int] = []
        if self.bos_id is not None:
            ids.append(self.bos_id)
        for i, w in enumerate(context):
            ids.extend(self.adapter.word_ids(w, sentence_initial=(i == 0)))
        if not ids:
            raise ValueError(
                "tokenizer has no BOS/CLS token; empty context unsupported"
            )
        return ids

    @torch.no_grad()
    def restricted_logprobs(self, context: list[str]) -> np.ndarray:
        """Log-probabilities over the restricted vocabulary, renormalized to
        sum to one, in the vocabulary's lexicographic order."""
        key = tuple(context)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        for w in context:
            if w.lower() not in self.vocab_index:
                raise UnknownWordError(w.lower())
        initial = len(context) == 0
        word_ids = [
            self.adapter.word_ids(w, sentence_initial=initial)
            for w in self.vocab
        ]
        ctx = self._context_ids(context)
        with self._lock:
            logits = self.model(input_ids=torch.tensor([ctx])).logits
            base = log_softmax(logits[0, -1], dim=-1).cpu().numpy()
            scores = np.empty(len(self.vocab))
            multi: list[int] = []
            for j, ids in enumerate(word_ids):
                if len(ids) == 1:
                    scores[j] = base[ids[0]]
                else:
                    multi.append(j)
            for start in range(0, len(multi), self.max_batch):
                chunk = multi[start: start + self.max_batch]
                scores[chunk] = self._chain_scores(
                    ctx, [word_ids[j] for j in chunk], base
                )
        total = _logsumexp(scores)
        out = scores - total
        out.setflags(write=False)
        self._cache[key] = out
        return out

    def _chain_scores(self, ctx: list[int], id_lists: list[list[int]],
                      base: np.ndarray) -> np.ndarray:
        pad = self.tokenizer.pad_token_id
        if pad is None:
            pad = 0
        max_len = max(len(ctx) + len(ids) for ids in id_lists)
        batch = np.full((len(id_lists), max_len), pad, dtype=np.int64)
        mask = np.zeros((len(id_lists), max_len), dtype=np.int64)
        for r, ids in enumerate(id_lists):
            seq = ctx + ids
            batch[r, : len(seq)] = seq
            mask[r, : len(seq)] = 1
        logits = self.model(
            input_ids=torch.tensor(batch),
            attention_mask=torch.tensor(mask),
        ).logits
        lps = log_softmax(logits, dim=-1).cpu().numpy()
        out = np.empty(len(id_lists))
        for r, ids in enumerate(id_lists):
            total = base[ids[0]]
            for i in range(1, len(ids)):
                pos = len(ctx) + i - 1
                total += lps[r, pos, ids[i]]
            out[r] = total
        return out


class MaskedScorer:
    """Masked-fill probabilities and span subword counts."""

    def __init__(self, model_name: str, max_batch: int = 64):
        from transformers import AutoModelForMaskedLM, AutoTokenizer

        self.name = model_name
        self.tokenizer = AutoTokenizer.from_pretrained(model_name)
        self.model = AutoModelForMaskedLM.from_pretrained(model_name)
        self.model.eval()
        self.adapter = _TokenizerAdapter(self.tokenizer)
        self.fingerprint = _fingerprint(model_name, self.model)
        self._lock = threading.Lock()
        if self.tokenizer.mask_token_id is None:
            raise ValueError(f"{model_name} has no mask token")

    def span_token_count(self, span: str) -> int:
        # mid-sentence convention: spans never start the sentence
        ids: list[int] = []
        for i, w in enumerate(span.split()):
            ids.extend(self.adapter.word_ids(w, sentence_initial=False))
        return len(ids)

    def candidate_ids(self, candidate: str, sentence_initial: bool) -> list[int]:
        return self.adapter.word_ids(candidate, sentence_initial)

    @torch.no_grad()
    def masked_prob(self, tokens: list[str], target_index: int,
                    candidate: str) -> float | None:
        """Probability of the candidate at the target mask; ``None`` when the
        candidate is multi-subword (the exclusion signal)."""
        if not (0 <= target_index < len(tokens)):
            raise ValueError(f"target_index {target_index} out of range")
        if tokens[target_index] != MASK_SENTINEL:
            raise ValueError("target_index does not point at a mask")
        cand_ids = self.candidate_ids(candidate, sentence_initial=(target_index == 0))
        if len(cand_ids) != 1:
            return None
        ids: list[int] = []
        if self.tokenizer.cls_token_id is not None:
            ids.append(self.tokenizer.cls_token_id)
        target_pos = None
        for i, tok in enumerate(tokens):
            if tok == MASK_SENTINEL:
                if i == target_index:
                    target_pos = len(ids)
                ids.append(self.tokenizer.mask_token_id)
            else:
                ids.extend(self.adapter.word_ids(tok, sentence_initial=(i == 0)))
        if self.tokenizer.sep_token_id is not None:
            ids.append(self.tokenizer.sep_token_id)
        assert target_pos is not None
        with self._lock:
            logits = self.model(input_ids=torch.tensor([ids])).logits
            lp = log_softmax(logits[0, target_pos], dim=-1)
            prob = float(lp[cand_ids[0]].exp())
        return prob


def _logsumexp(v: np.ndarray) -> float:
    m = float(v.max())
    return m + float(np.log(np.exp(v - m).sum()))
