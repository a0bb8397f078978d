import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from guardgen.core import BigramModel, ToyTokenizer

settings.register_profile(
    "suite",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")


@pytest.fixture
def chain_tokenizer() -> ToyTokenizer:
    # a -> b -> c -> </s> deterministic chain vocabulary
    return ToyTokenizer(["<unk>", "a", "b", "c", "</s>"])


@pytest.fixture
def chain_model(chain_tokenizer: ToyTokenizer) -> BigramModel:
    a, b, c, eos = 1, 2, 3, 4
    table = {a: {b: 1.0}, b: {c: 1.0}, c: {eos: 1.0}}
    return BigramModel(chain_tokenizer.vocab_size, table)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)
