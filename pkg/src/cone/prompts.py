"""Prompt templates for the two LLM-backed judgments.

The wording is load-bearing: extraction quality and yes/no coverage decisions
were tuned against these exact strings, so they are substituted into, never
reflowed. Substitution is plain string replacement to stay safe when the
passage or response text itself contains braces.
"""

from __future__ import annotations

EXTRACTION_TEMPLATE = (
    "# Instruction: I will give you a user query and a text to the user query. "
    "You should extract the nuggets of information related to the user query "
    "from the given text. The nuggets should be an exact copy of a span of text "
    "from the text. Please extract the nuggets and write each nugget in one "
    "line. If there is no nugget of information in the given text, please only "
    'say "No nugget".\n'
    "# User query: {q_r}\n"
    "# Text: {t}\n"
    "(Please copy exact spans from the text as nuggets)\n"
    "# Nuggets:"
)

COVERAGE_TEMPLATE = (
    "# Instruction: I will provide you with a response and a gold information "
    "piece. Your task is to determine whether the response captures this piece "
    "of information or not.\n"
    "# Gold Information: {n_g}\n"
    "# Response: {R}\n"
    "# Please answer the following:\n"
    "Does the Response capture the Gold Information? Only respond with "
    '"yes" or "no" without further explanation.\n'
    "# Answer (yes/no):"
)


def extraction_prompt(resolved_utterance: str, text: str) -> str:
    """Fill the nugget-extraction template with the query and source text."""
    return (EXTRACTION_TEMPLATE
            .replace("{q_r}", resolved_utterance)
            .replace("{t}", text))


def coverage_prompt(gold_text: str, response_text: str) -> str:
    """Fill the gold-coverage template with one gold nugget and the response."""
    return (COVERAGE_TEMPLATE
            .replace("{n_g}", gold_text)
            .replace("{R}", response_text))
