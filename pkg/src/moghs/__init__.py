"""Multi-objective co-design search over graph-grammar robot morphologies."""

from importlib import resources

__version__ = "0.1.0"

BUILTIN_GRAMMARS = ("planar_crawler", "tiny_chain")


def builtin_grammar_path(name: str):
    """Filesystem path of a shipped grammar (``planar_crawler`` or ``tiny_chain``)."""
    if name not in BUILTIN_GRAMMARS:
        raise KeyError(f"unknown builtin grammar {name!r}; have {BUILTIN_GRAMMARS}")
    return resources.files(__name__) / "assets" / f"{name}.json"


def preset_path(name: str):
    """Filesystem path of a shipped experiment preset TOML."""
    return resources.files(__name__) / "assets" / "presets" / f"{name}.toml"
