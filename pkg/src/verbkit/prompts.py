"""Cloze prompt templates with one text slot and one mask slot."""

from __future__ import annotations

from dataclasses import dataclass

from .backend import MASK_MARKER
from .errors import ConfigError

TEMPLATE_PATTERNS = {
    "study": "{text}. The field of this study is related to: {mask}.",
    "article": "{text}. The field of this article is related to: {mask}.",
}


@dataclass(frozen=True)
class PromptTemplate:
    pattern: str

    def __post_init__(self):
        if self.pattern.count("{text}") != 1 or self.pattern.count("{mask}") != 1:
            raise ConfigError(
                f"template must contain exactly one {{text}} and one {{mask}} slot: {self.pattern!r}"
            )

    def fill(self, text: str, mask: str) -> str:
        filled = self.pattern.replace("{text}", text).replace("{mask}", mask)
        if not text.strip():
            # No leading separator when there is nothing in the text slot.
            filled = filled.lstrip(" .,:;")
        return filled

    def mask_prompt(self, text: str) -> str:
        """The cloze prompt the masked LM completes."""
        return self.fill(text, MASK_MARKER)

    def context_prompt(self, phrase: str) -> str:
        """The phrase dropped into the mask slot, text slot left empty."""
        return self.fill("", phrase)


def template_by_name(name_or_pattern: str) -> PromptTemplate:
    """Look up a named variant, or treat the argument as a literal pattern."""
    pattern = TEMPLATE_PATTERNS.get(name_or_pattern, name_or_pattern)
    return PromptTemplate(pattern)


def default_template() -> PromptTemplate:
    return template_by_name("study")
