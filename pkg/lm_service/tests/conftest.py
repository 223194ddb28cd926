"""Tiny offline model fixtures: a WordPiece tokenizer over a toy word list,
a small random-weight causal LM, and a small random-weight masked LM, saved
to disk and loaded through the same AutoModel path as real checkpoints."""

import json
import string

import pytest
import torch

WORDS = ["ball", "boy", "kick", "kicked", "lick", "licked", "net", "the"]
SPECIALS = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]


def build_wordpiece_vocab() -> list[str]:
    pieces = list(SPECIALS)
    pieces += list(string.ascii_lowercase)
    pieces += [f"##{c}" for c in string.ascii_lowercase]
    pieces += ["the", "boy", "kick", "lick", "ball", "net", "##ed", "##s"]
    return pieces


@pytest.fixture(scope="session")
def model_dirs(tmp_path_factory):
    from transformers import (
        BertConfig,
        BertForMaskedLM,
        BertTokenizer,
        GPT2Config,
        GPT2LMHeadModel,
    )

    root = tmp_path_factory.mktemp("tiny_models")
    vocab_path = root / "wordpiece.txt"
    pieces = build_wordpiece_vocab()
    vocab_path.write_text("\n".join(pieces) + "\n")
    tokenizer = BertTokenizer(str(vocab_path), do_lower_case=True)

    torch.manual_seed(0)
    causal_dir = root / "causal"
    gpt2 = GPT2LMHeadModel(GPT2Config(
        vocab_size=len(pieces), n_positions=64, n_embd=32,
        n_layer=2, n_head=2,
    ))
    gpt2.save_pretrained(causal_dir)
    tokenizer.save_pretrained(causal_dir)

    masked_dir = root / "masked"
    bert = BertForMaskedLM(BertConfig(
        vocab_size=len(pieces), hidden_size=32, num_hidden_layers=2,
        num_attention_heads=2, intermediate_size=64,
        max_position_embeddings=64,
    ))
    bert.save_pretrained(masked_dir)
    tokenizer.save_pretrained(masked_dir)

    vocab_file = root / "restricted_vocab.tsv"
    vocab_file.write_text("".join(f"{w}\t{10 * (i + 1)}\n"
                                  for i, w in enumerate(WORDS)))
    return {"causal": str(causal_dir), "masked": str(masked_dir),
            "vocab": str(vocab_file), "root": root}


@pytest.fixture(scope="session")
def service_config(model_dirs):
    from lm_service.config import ServiceConfig

    return ServiceConfig(
        causal_model=model_dirs["causal"],
        masked_model=model_dirs["masked"],
        vocab_file=model_dirs["vocab"],
        max_batch=4,
    )


@pytest.fixture(scope="session")
def client(service_config):
    from fastapi.testclient import TestClient

    from lm_service.app import create_app

    with TestClient(create_app(service_config)) as c:
        yield c
