"""Token estimation and budget-fitted revision prompt assembly."""

import pytest

from arrkit import (
    BudgetExceededError,
    Paragraph,
    assemble_revision_prompt,
    estimate_tokens,
)


class TestEstimateTokens:
    @pytest.mark.parametrize(
        "text,expected",
        [
            ("", 0),
            ("a", 1),
            ("abcd", 1),
            ("abcde", 2),
            ("abcdefgh", 2),
            ("中" * 10, 10),
            ("ab中文文", 4),  # ceil(2/4) + 3
            (" \n\t ", 1),
        ],
    )
    def test_examples(self, text, expected):
        assert estimate_tokens(text) == expected

    def test_cjk_block_boundaries(self):
        one_token_each = ["㐀", "䶿", "一", "鿿", "豈", "﫿", "\U00020000", "\U0002fa1f"]
        for ch in one_token_each:
            assert estimate_tokens(ch * 4) == 4, hex(ord(ch))
        quarter_token_each = ["㏿", "䷀", "ꀀ", "", "ﬀ", "\U0002fa20"]
        for ch in quarter_token_each:
            assert estimate_tokens(ch * 4) == 1, hex(ord(ch))

    def test_supplementary_plane_counts_scalars_not_utf16_units(self):
        # one astral CJK scalar is one token even though it is two UTF-16 units
        assert estimate_tokens("\U00020000") == 1

    def test_mixed_additivity(self):
        assert estimate_tokens("abcd" + "中" * 3) == 1 + 3


def _render(instruction, query, draft, entries):
    evidence = "EVIDENCE:"
    if entries:
        evidence += "\n" + "\n\n".join(entries)
    return "\n\n".join(
        ["INSTRUCTION:\n" + instruction, "QUERY:\n" + query, "DRAFT ANSWER:\n" + draft, evidence]
    )


class TestAssembleRevisionPrompt:
    def test_full_layout(self):
        evidence = [
            Paragraph(id=10, title="T1", body="B1"),
            Paragraph(id=20, title="T2", body="B2"),
        ]
        prompt = assemble_revision_prompt("I", "Q", "D", evidence, budget=1000)
        assert prompt == (
            "INSTRUCTION:\nI\n\n"
            "QUERY:\nQ\n\n"
            "DRAFT ANSWER:\nD\n\n"
            "EVIDENCE:\n[1] T1\nB1\n\n[2] T2\nB2"
        )

    def test_no_evidence_layout(self):
        prompt = assemble_revision_prompt("I", "Q", "D", [], budget=1000)
        assert prompt == "INSTRUCTION:\nI\n\nQUERY:\nQ\n\nDRAFT ANSWER:\nD\n\nEVIDENCE:"

    def test_entries_numbered_by_input_rank(self):
        evidence = [Paragraph(id=9, title="zz", body="b"), Paragraph(id=1, title="aa", body="b")]
        prompt = assemble_revision_prompt("I", "Q", "D", evidence, budget=1000)
        assert prompt.index("[1] zz") < prompt.index("[2] aa")

    def test_exact_budget_keeps_everything(self):
        evidence = [Paragraph(id=1, title="T", body="B")]
        full = _render("I", "Q", "D", ["[1] T\nB"])
        prompt = assemble_revision_prompt("I", "Q", "D", evidence, budget=estimate_tokens(full))
        assert prompt == full

    def test_one_under_budget_drops_the_last_entry(self):
        evidence = [Paragraph(id=1, title="T", body="B")]
        full_cost = estimate_tokens(_render("I", "Q", "D", ["[1] T\nB"]))
        prompt = assemble_revision_prompt("I", "Q", "D", evidence, budget=full_cost - 1)
        assert prompt == _render("I", "Q", "D", [])

    def test_drops_highest_rank_first_even_when_smaller(self):
        big = Paragraph(id=1, title="big", body="x" * 400)
        small = Paragraph(id=2, title="s", body="y")
        core = estimate_tokens(_render("I", "Q", "D", []))
        with_small_only = estimate_tokens(_render("I", "Q", "D", ["[2] s\ny"]))
        # enough room for the small entry alone, not for the big one:
        # the trimming must still cut from the tail, leaving no evidence
        budget = with_small_only + 5
        assert budget > core
        prompt = assemble_revision_prompt("I", "Q", "D", [big, small], budget=budget)
        assert prompt == _render("I", "Q", "D", [])

    def test_core_sections_never_truncated(self):
        evidence = [Paragraph(id=i, title=f"t{i}", body="z" * 50) for i in range(5)]
        instruction, query, draft = "inst " * 10, "query " * 10, "draft " * 10
        core = estimate_tokens(_render(instruction, query, draft, []))
        prompt = assemble_revision_prompt(instruction, query, draft, evidence, budget=core + 10)
        assert instruction in prompt
        assert query in prompt
        assert draft in prompt
        assert estimate_tokens(prompt) <= core + 10

    def test_core_over_budget_raises(self):
        with pytest.raises(BudgetExceededError, match="budget is 2"):
            assemble_revision_prompt("word " * 40, "Q", "D", [], budget=2)

    def test_error_even_with_no_evidence_to_drop(self):
        evidence = [Paragraph(id=1, title="T", body="B")]
        with pytest.raises(BudgetExceededError):
            assemble_revision_prompt("word " * 40, "Q", "D", evidence, budget=2)

    def test_budget_must_be_positive(self):
        with pytest.raises(ValueError):
            assemble_revision_prompt("I", "Q", "D", [], budget=0)
