"""The unified four-section profile document: type, Markdown renderer, parser.

Every profile (item or user) is one Markdown document with exactly four
second-level headings in a fixed order: Overview, Attributes, Description,
Dislikes. Attributes and Dislikes are bullet lists of short lowercase tags.
``parse_profile(render_profile(p)) == p`` for every valid profile.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field

SECTIONS = ("Overview", "Attributes", "Description", "Dislikes")


class ProfileError(Exception):
    pass


class MissingSection(ProfileError):
    def __init__(self, name: str):
        super().__init__(f"profile document lacks required section: {name}")
        self.section = name


@dataclass
class Profile:
    subject_kind: str                    # "item" | "user"
    subject_id: int
    overview: str
    attributes: list[str] = field(default_factory=list)
    description: str = ""
    dislikes: list[str] = field(default_factory=list)
    minimal: bool = False                # built from fallback, not a model call

    def __post_init__(self):
        self.overview = self.overview.strip()
        self.description = self.description.strip()
        self.attributes = normalize_tags(self.attributes)
        self.dislikes = normalize_tags(self.dislikes)


def normalize_tags(tags) -> list[str]:
    """Lowercase, collapse whitespace, deduplicate (first occurrence wins)."""
    seen = []
    for t in tags:
        t = " ".join(str(t).lower().split())
        if t and t not in seen:
            seen.append(t)
    return seen


def render_profile(p: Profile) -> str:
    """Emit the unified Markdown layout for a profile."""
    lines = [f"## Overview", p.overview.strip(), ""]
    lines.append("## Attributes")
    lines.extend(f"- {t}" for t in p.attributes)
    lines.append("")
    lines.append("## Description")
    if p.description.strip():
        lines.append(p.description.strip())
    lines.append("")
    lines.append("## Dislikes")
    lines.extend(f"- {t}" for t in p.dislikes)
    lines.append("")
    return "\n".join(lines)


def _split_sections(markdown: str) -> dict[str, list[str]]:
    sections: dict[str, list[str]] = {}
    current = None
    for line in markdown.splitlines():
        m = re.match(r"^##\s+(.*?)\s*$", line)
        if m:
            current = m.group(1)
            sections.setdefault(current, [])
            continue
        if current is not None:
            sections[current].append(line)
    return sections


def parse_profile(markdown: str, subject_kind: str = "item", subject_id: int = 0) -> Profile:
    """Parse a unified profile document; inverse of render_profile on its image.

    Unknown extra sections are ignored with a warning; a missing required
    section raises MissingSection.
    """
    sections = _split_sections(markdown)
    for name in SECTIONS:
        if name not in sections:
            raise MissingSection(name)
    extras = [s for s in sections if s not in SECTIONS]
    if extras:
        warnings.warn(f"ignoring unknown profile sections: {extras}", stacklevel=2)

    def text_of(name: str) -> str:
        return "\n".join(sections[name]).strip()

    def tags_of(name: str) -> list[str]:
        tags = []
        for line in sections[name]:
            line = line.strip()
            if line.startswith("- "):
                tags.append(line[2:].strip())
            elif line.startswith("-"):
                tags.append(line[1:].strip())
        return tags

    return Profile(
        subject_kind=subject_kind,
        subject_id=subject_id,
        overview=text_of("Overview"),
        attributes=tags_of("Attributes"),
        description=text_of("Description"),
        dislikes=tags_of("Dislikes"),
    )


def render_integrated_text(meta) -> str:
    """Plain concatenated metadata: the schema-free embedding input variant."""
    parts = [f"{meta.title}."]
    if meta.genres:
        parts.append(f"genres: {', '.join(meta.genres)}.")
    if meta.overview.strip():
        parts.append(meta.overview.strip())
    return " ".join(parts)
