import pytest

from moghs import builtin_grammar_path
from moghs.grammar import load_grammar_file


@pytest.fixture(scope="session")
def crawler():
    return load_grammar_file(builtin_grammar_path("planar_crawler"))


@pytest.fixture(scope="session")
def tiny():
    return load_grammar_file(builtin_grammar_path("tiny_chain"))
