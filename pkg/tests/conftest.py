import pytest

from noisyreader.lexicon import Vocabulary, build_vocabulary
from noisyreader.noise import ActionPrior, NoiseConfig, NoiseModel
from noisyreader.prior import SmoothingConfig, train_ngram
from noisyreader.stimuli import Item, load_items

from pathlib import Path

DATA_DIR = Path(__file__).resolve().parent.parent / "data"
FIXTURE_DIR = Path(__file__).resolve().parent / "data"


# -- world A: 8-word oracle world (T=4 sentences) ---------------------------

WORLD_A_CORPUS = (
    ["the boy kick ball"] * 30
    + ["the boy lick net"] * 30
    + ["the boy kicks ball"] * 10
    + ["the boy licks net"] * 10
    + ["the boy kick net"] * 2
    + ["the boy lick ball"] * 2
)


@pytest.fixture(scope="session")
def world_a():
    counts = {}
    for s in WORLD_A_CORPUS:
        for w in s.split():
            counts[w] = counts.get(w, 0) + 1
    vocab = Vocabulary.from_counts(counts, source_tag="world-a")
    model = train_ngram(
        WORLD_A_CORPUS, order=2,
        smoothing=SmoothingConfig(delta=0.1, weights=(0.9, 0.1)), vocab=vocab,
    )
    noise = NoiseModel(vocab, ActionPrior(3.0, 1.0), NoiseConfig())
    return vocab, model, noise


# -- world B: criterion-4 world (five conditions, T=5) ----------------------

WORLD_B_CORPUS = (
    ["the boy kicked the ball"] * 40
    + ["the boy licked the lolly"] * 40
    + ["the boy read the book"] * 40
    + ["the boy kicks the ball"] * 4
    + ["the boy licks the lolly"] * 4
    + ["the boy kicked the lolly"]
    + ["the boy licked the ball"]
)

WORLD_B_ITEM = Item(
    id=1,
    preamble="the boy",
    critical_pair=("kicked", "licked"),
    typo_pair=("kjcked", "ljcked"),
    unrelated_word="read",
    intervening="the",
    predicate_pair=("ball.", "lolly."),
    late_predicate="book.",
)


@pytest.fixture(scope="session")
def world_b():
    counts = {}
    for s in WORLD_B_CORPUS:
        for w in s.split():
            counts[w] = counts.get(w, 0) + 1
    vocab = Vocabulary.from_counts(counts, source_tag="world-b")
    model = train_ngram(
        WORLD_B_CORPUS, order=3,
        smoothing=SmoothingConfig(delta=0.1, weights=(0.85, 0.1, 0.05)),
        vocab=vocab,
    )
    noise = NoiseModel(vocab, ActionPrior(3.0, 1.0),
                       NoiseConfig(semantic_floor=0.5))
    return vocab, model, noise


# -- packaged materials ------------------------------------------------------

@pytest.fixture(scope="session")
def materials():
    items = load_items(DATA_DIR / "items.json")
    extras = [w for item in items for w in item.model_words()]
    vocab = build_vocabulary(DATA_DIR / "wordfreq_demo.tsv", extras)
    return items, vocab


@pytest.fixture(scope="session")
def demo_prior(materials):
    _, vocab = materials
    corpus = (DATA_DIR / "demo_corpus.txt").read_text().splitlines()
    return train_ngram(
        corpus, order=3, smoothing=SmoothingConfig(delta=0.1), vocab=vocab
    )
