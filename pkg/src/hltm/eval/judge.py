"""Optional LLM-as-judge correctness hook for benchmark runs (off by default)."""

from __future__ import annotations

import logging
from typing import Callable

from .. import prompts
from ..backends import ExtractionRequest, GenerationBackend, Schema, tokenize

logger = logging.getLogger(__name__)

Judge = Callable[[str, str, str], float]


def make_llm_judge(generator: GenerationBackend) -> Judge:
    """Return ``judge(question, gold, answer) -> 1.0 | 0.0`` backed by one call per query."""

    def judge(question: str, gold: str, answer: str) -> float:
        req = ExtractionRequest(prompts.JUDGE_SYSTEM, prompts.render_judge(question, gold, answer),
                                Schema.FREE_TEXT, task="judge")
        verdict = tokenize(generator.generate(req).text)
        if not verdict or verdict[0] not in ("correct", "incorrect"):
            logger.warning("judge reply %r is not a verdict; scoring 0", verdict[:3])
            return 0.0
        return 1.0 if verdict[0] == "correct" else 0.0

    return judge
