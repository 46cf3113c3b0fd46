"""Prompt templates, attribute vocabularies and text-variant enumeration."""

from __future__ import annotations

import enum
import itertools
import re
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ConfigError, TemplateError

DEFAULT_COLORS = (
    "red", "orange", "yellow", "green", "blue", "purple",
    "pink", "brown", "black", "white", "gray",
)
DEFAULT_SIZES = ("tiny", "small", "big", "large", "gigantic")

_SLOTS = {"class", "attr"}
_VOWEL = re.compile(r"^[aeiou]", re.IGNORECASE)
_ARTICLE = re.compile(r"\b([Aa])n?\s+(\w)")


class ComboPolicy(str, enum.Enum):
    SINGLE_ONLY = "single_only"
    SINGLE_AND_PAIRS = "single_and_color_size_pairs"


@dataclass(frozen=True)
class PromptTemplate:
    pattern: str
    id: str
    # Fixed "a"/"an" rule; off by default so that T0 is exactly T1 minus the attribute words.
    article_agreement: bool = False

    def __post_init__(self):
        slots = [name for _, name, _, _ in string.Formatter().parse(self.pattern) if name is not None]
        unknown = set(slots) - _SLOTS
        if unknown:
            raise TemplateError(f"template {self.id!r} has unknown slot(s): {sorted(unknown)}")
        if slots.count("class") != 1:
            raise TemplateError(f"template {self.id!r} must contain exactly one {{class}} slot")
        if slots.count("attr") > 1:
            raise TemplateError(f"template {self.id!r} has more than one {{attr}} slot")


TEMPLATES = {
    "photo": PromptTemplate("a photo of a {attr} {class}", "photo"),
    "picture": PromptTemplate("a picture of a {attr} {class}", "picture"),
    "sketch": PromptTemplate("a sketch of a {attr} {class}", "sketch"),
}
DEFAULT_TEMPLATE = "photo"


def get_template(template_id: str) -> PromptTemplate:
    try:
        return TEMPLATES[template_id]
    except KeyError:
        raise TemplateError(f"unknown template id {template_id!r}; known: {sorted(TEMPLATES)}") from None


@dataclass(frozen=True)
class AttributeVocabulary:
    colors: tuple[str, ...] = DEFAULT_COLORS
    sizes: tuple[str, ...] = DEFAULT_SIZES
    combo_policy: ComboPolicy = ComboPolicy.SINGLE_AND_PAIRS

    def __post_init__(self):
        object.__setattr__(self, "colors", tuple(self.colors))
        object.__setattr__(self, "sizes", tuple(self.sizes))
        object.__setattr__(self, "combo_policy", ComboPolicy(self.combo_policy))
        for name, words in (("colors", self.colors), ("sizes", self.sizes)):
            for w in words:
                if not w or w != w.lower() or w.strip() != w:
                    raise ConfigError(f"{name} entry {w!r} must be lowercase, nonempty and unpadded")
            if len(set(words)) != len(words):
                raise ConfigError(f"duplicate entries in {name}")

    def combos(self) -> list[tuple[str, ...]]:
        """All attribute combos under the policy, sorted lexicographically.

        Pairs are rendered size-before-color ("small brown dog").
        """
        out = [(w,) for w in itertools.chain(self.colors, self.sizes)]
        if self.combo_policy is ComboPolicy.SINGLE_AND_PAIRS:
            out += [(s, c) for s in self.sizes for c in self.colors]
        return sorted(set(out))

    def category_of(self, word: str) -> str:
        if word in self.colors:
            return "color"
        if word in self.sizes:
            return "size"
        raise KeyError(word)


@dataclass(frozen=True)
class TextVariantPair:
    class_name: str
    attr_combo: tuple[str, ...]
    t0: str
    t1: str
    template_id: str


def _normalize(text: str) -> str:
    return " ".join(text.split())


def render_prompt(template: PromptTemplate, class_name: str, attrs: Sequence[str] = ()) -> str:
    if not class_name or not class_name.strip():
        raise ConfigError("class name must be nonempty")
    try:
        text = template.pattern.format(**{"class": class_name, "attr": " ".join(attrs)})
    except (KeyError, IndexError, ValueError) as exc:
        raise TemplateError(f"cannot render template {template.id!r}: {exc}") from None
    text = _normalize(text)
    if template.article_agreement:
        text = _ARTICLE.sub(lambda m: (m.group(1) + ("n " if _VOWEL.match(m.group(2)) else " ")) + m.group(2), text)
    return text


def enumerate_variants(
    classes: Sequence[str],
    vocab: AttributeVocabulary,
    template: PromptTemplate,
) -> list[TextVariantPair]:
    if not classes:
        raise ConfigError("class list is empty")
    combos = vocab.combos()
    if not combos:
        raise ConfigError("attribute vocabulary is empty")
    return [
        TextVariantPair(
            class_name=name,
            attr_combo=combo,
            t0=render_prompt(template, name, ()),
            t1=render_prompt(template, name, combo),
            template_id=template.id,
        )
        for name in classes
        for combo in combos
    ]


def strip_attrs(t1: str, attrs: Iterable[str]) -> str:
    """Remove the attribute words from a rendered T1 (one occurrence each, left to right)."""
    words = t1.split()
    for a in attrs:
        for w in a.split():
            words.remove(w)
    return " ".join(words)


def write_variants(variants: Sequence[TextVariantPair], path) -> None:
    """Audit file: one ``class<TAB>combo<TAB>t0<TAB>t1`` record per line, UTF-8."""
    lines = [f"{v.class_name}\t{'+'.join(v.attr_combo)}\t{v.t0}\t{v.t1}\n" for v in variants]
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_class_list(path) -> list[str]:
    names = [line.strip() for line in Path(path).read_text(encoding="utf-8").splitlines()]
    names = [n for n in names if n and not n.startswith("#")]
    if not names:
        raise ConfigError(f"no class names in {path}")
    return names
