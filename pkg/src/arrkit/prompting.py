"""Revision prompt assembly under a token budget.

The reviser model accepts a bounded number of input tokens, so the
prompt builder estimates token counts with a fixed documented rule and
drops evidence entries (never the instruction, query, or draft) until
the prompt fits.
"""

from __future__ import annotations

import math
from typing import Sequence

from .errors import BudgetExceededError
from .knowledge_bank import Paragraph

DEFAULT_PROMPT_BUDGET = 8000

DEFAULT_REVISION_INSTRUCTION = (
    "Revise the draft answer to the query using the evidence paragraphs below. "
    "Keep the claims the evidence supports, correct the ones it contradicts, "
    "and name the evidence entries you rely on."
)

# CJK unified ideograph blocks (BMP extensions A, unified, compatibility,
# and the supplementary-plane extensions). One scalar in these blocks
# counts as one token; everything else averages four scalars per token.
_CJK_RANGES = (
    (0x3400, 0x4DBF),
    (0x4E00, 0x9FFF),
    (0xF900, 0xFAFF),
    (0x20000, 0x2FA1F),
)


def _is_cjk(codepoint: int) -> bool:
    for lo, hi in _CJK_RANGES:
        if lo <= codepoint <= hi:
            return True
    return False


def estimate_tokens(text: str) -> int:
    """Deterministic token-count estimate.

    count = (number of CJK-block scalars) + ceil(other scalars / 4).
    """
    cjk = 0
    other = 0
    for ch in text:
        if _is_cjk(ord(ch)):
            cjk += 1
        else:
            other += 1
    return cjk + math.ceil(other / 4)


def _render(instruction: str, query: str, draft: str, entries: Sequence[str]) -> str:
    evidence_section = "EVIDENCE:"
    if entries:
        evidence_section += "\n" + "\n\n".join(entries)
    return "\n\n".join(
        (
            "INSTRUCTION:\n" + instruction,
            "QUERY:\n" + query,
            "DRAFT ANSWER:\n" + draft,
            evidence_section,
        )
    )


def assemble_revision_prompt(
    instruction: str,
    query: str,
    draft: str,
    evidence: Sequence[Paragraph],
    budget: int = DEFAULT_PROMPT_BUDGET,
) -> str:
    """Build the four-section revision prompt, fitted to ``budget``.

    Sections appear in fixed order: INSTRUCTION, QUERY, DRAFT ANSWER,
    EVIDENCE. Evidence entries are numbered by retrieval rank and
    rendered as title plus body. When the full prompt exceeds the
    budget, entries are dropped from the highest rank downward until it
    fits; the instruction, query, and draft are never truncated.

    Raises ``BudgetExceededError`` when even the evidence-free prompt is
    over budget.
    """
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")
    entries = [
        f"[{rank}] {paragraph.title}\n{paragraph.body}"
        for rank, paragraph in enumerate(evidence, start=1)
    ]
    kept = len(entries)
    while True:
        prompt = _render(instruction, query, draft, entries[:kept])
        if estimate_tokens(prompt) <= budget:
            return prompt
        if kept == 0:
            raise BudgetExceededError(
                f"instruction+query+draft need {estimate_tokens(prompt)} estimated "
                f"tokens, budget is {budget}; evidence cannot be cut further"
            )
        kept -= 1
