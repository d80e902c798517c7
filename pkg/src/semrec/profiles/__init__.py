"""Semantic profiles: unified schema plus gateway-driven generation."""

from .schema import (
    SECTIONS,
    MissingSection,
    Profile,
    ProfileError,
    normalize_tags,
    parse_profile,
    render_integrated_text,
    render_profile,
)

_GENERATE_EXPORTS = {
    "generate_item_profile",
    "generate_user_profile",
    "select_profile_seeds",
    "integrated_user_text",
    "minimal_item_profile",
    "minimal_user_profile",
    "save_profiles",
    "load_profiles",
    "item_meta_block",
    "seed_batch_block",
}

__all__ = sorted(
    {"SECTIONS", "MissingSection", "Profile", "ProfileError", "normalize_tags",
     "parse_profile", "render_integrated_text", "render_profile"} | _GENERATE_EXPORTS
)


def __getattr__(name):
    # generation pulls in the gateway, which itself needs .schema; importing
    # it lazily keeps either import order cycle-free
    if name in _GENERATE_EXPORTS:
        from . import generate
        return getattr(generate, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
