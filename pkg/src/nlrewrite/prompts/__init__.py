"""Prompt template loading and slot filling.

Templates live next to this module as .prompt files and are treated as
immutable text; slots like {SCHEMA_SLOT} are replaced literally so that
braces elsewhere in the template text survive untouched.
"""

from __future__ import annotations

from importlib import resources

CHECKER = "checker"
REFLECTOR = "reflector"
REFLECTOR_INIT_FLAWS = "reflector_init_flaws"
REFLECTOR_INIT_ACTIONS = "reflector_init_actions"
REWRITER = "rewriter"

_cache: dict[str, str] = {}


def load_template(name: str, prompt_dir=None) -> str:
    """Read a template by base name, from prompt_dir when given (config
    override) else from the packaged defaults."""
    if prompt_dir is not None:
        from pathlib import Path
        return (Path(prompt_dir) / f"{name}.prompt").read_text(encoding="utf-8")
    if name not in _cache:
        _cache[name] = (
            resources.files(__package__).joinpath(f"{name}.prompt").read_text(encoding="utf-8")
        )
    return _cache[name]


def fill(template: str, slots: dict[str, str]) -> str:
    """Replace {KEY} tokens literally; unknown tokens in the template are left
    alone, and every provided slot must exist in the template."""
    out = template
    for key, value in slots.items():
        token = "{" + key + "}"
        if token not in out:
            raise KeyError(f"template has no slot {token}")
        out = out.replace(token, value)
    return out
