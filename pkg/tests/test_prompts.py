"""Prompt rendering, list building, and subset sampling."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xmodal.errors import EmptyRecordSet, MissingSlot, SampleTooLarge
from xmodal.prompts import (
    LabelRecord,
    PromptTemplate,
    build_prompt_list,
    read_label_csv,
    render_prompt,
    sample_prompt_subset,
    write_prompt_list,
)


class TestRender:
    def test_basic_keeps_braces(self):
        out = render_prompt(PromptTemplate.of("basic"), LabelRecord(fine_label="baby"))
        assert out == "A photo of a {baby}."

    def test_hierarchical(self):
        record = LabelRecord(fine_label="baby", coarse_label="people")
        out = render_prompt(PromptTemplate.of("hierarchical"), record)
        assert out == "A photo of a {baby}, categorized as {people}."

    def test_wiki_context(self):
        record = LabelRecord(
            fine_label="snapdragon",
            description="Antirrhinum is a genus of plants commonly known as dragon flowers",
        )
        out = render_prompt(PromptTemplate.of("wiki_context"), record)
        assert out == (
            "A photo of {snapdragon}. "
            "{Antirrhinum is a genus of plants commonly known as dragon flowers}."
        )

    def test_braces_can_be_disabled(self):
        out = render_prompt(
            PromptTemplate.of("basic", keep_braces=False), LabelRecord(fine_label="dog")
        )
        assert out == "A photo of a dog."

    def test_missing_slot_raises(self):
        with pytest.raises(MissingSlot) as err:
            render_prompt(PromptTemplate.of("hierarchical"), LabelRecord(fine_label="baby"))
        assert err.value.name == "coarse"

    def test_description_trailing_period_not_doubled(self):
        record = LabelRecord(fine_label="rose", description="A flower.")
        out = render_prompt(PromptTemplate.of("wiki_context"), record)
        assert out == "A photo of {rose}. {A flower}."

    def test_single_trailing_period(self):
        out = render_prompt(PromptTemplate.of("basic"), LabelRecord(fine_label="dog"))
        assert out.endswith(".") and not out.endswith("..")

    @given(st.text(alphabet=st.characters(categories=["Ll", "Lu"]), min_size=1, max_size=12))
    @settings(max_examples=50)
    def test_no_unresolved_slots(self, label):
        out = render_prompt(PromptTemplate.of("basic"), LabelRecord(fine_label=label))
        assert "<" not in out and ">" not in out

    @given(
        st.lists(
            st.text(alphabet=st.characters(categories=["Ll"]), min_size=1, max_size=10),
            min_size=2,
            max_size=8,
            unique=True,
        )
    )
    @settings(max_examples=50)
    def test_injective_over_distinct_labels(self, labels):
        template = PromptTemplate.of("basic")
        rendered = [render_prompt(template, LabelRecord(fine_label=x)) for x in labels]
        assert len(set(rendered)) == len(labels)


class TestBuildList:
    def test_order_preserved(self):
        records = [LabelRecord(fine_label="cat"), LabelRecord(fine_label="dog")]
        out = build_prompt_list([PromptTemplate.of("basic")], records)
        assert out == ["A photo of a {cat}.", "A photo of a {dog}."]

    def test_duplicates_removed_first_kept(self):
        records = [
            LabelRecord(fine_label="cat"),
            LabelRecord(fine_label="dog"),
            LabelRecord(fine_label="cat"),
        ]
        out = build_prompt_list([PromptTemplate.of("basic")], records)
        assert out == ["A photo of a {cat}.", "A photo of a {dog}."]

    def test_empty_records_raise(self):
        with pytest.raises(EmptyRecordSet):
            build_prompt_list([PromptTemplate.of("basic")], [])

    def test_count_matches_flower_style_records(self):
        records = [
            LabelRecord(fine_label=f"flower_{i}", description=f"species number {i}")
            for i in range(102)
        ]
        out = build_prompt_list([PromptTemplate.of("wiki_context")], records)
        assert len(out) == len(records)  # count oracle against the input list


class TestSampleSubset:
    def test_full_size_is_membership_identity(self):
        prompts = [f"p{i}" for i in range(6)]
        assert set(sample_prompt_subset(prompts, 6, seed=9)) == set(prompts)

    def test_deterministic_under_seed(self):
        prompts = [f"p{i}" for i in range(10)]
        a = sample_prompt_subset(prompts, 3, seed=123)
        b = sample_prompt_subset(prompts, 3, seed=123)
        assert a == b

    def test_too_large_raises(self):
        with pytest.raises(SampleTooLarge):
            sample_prompt_subset(["a", "b"], 3, seed=0)

    def test_monte_carlo_inclusion_frequency(self):
        # frequency oracle: each of 10 items should appear with p = 5/10
        prompts = [f"p{i}" for i in range(10)]
        counts = {p: 0 for p in prompts}
        trials = 10000
        for seed in range(trials):
            for p in sample_prompt_subset(prompts, 5, seed=seed):
                counts[p] += 1
        for p, c in counts.items():
            assert abs(c / trials - 0.5) < 0.02, (p, c / trials)


class TestWritePromptList:
    def test_one_prompt_per_line_feeds_the_bundle_sidecar(self, tmp_path):
        from test_bundle import small_bundle
        from xmodal.bundle import load_bundle, save_bundle

        records = [LabelRecord(fine_label=f"thing{i}") for i in range(3)]
        prompts = build_prompt_list([PromptTemplate.of("basic")], records)
        sidecar = tmp_path / "prompts.txt"
        write_prompt_list(prompts, sidecar)
        assert sidecar.read_text().splitlines() == prompts

        bundle = small_bundle(m=3)
        path = tmp_path / "b.xmb"
        save_bundle(bundle, path)
        loaded = load_bundle(path, prompts_override=sidecar)
        assert loaded.anchors.prompts == prompts


class TestLabelCsv:
    def test_read_records(self, tmp_path):
        path = tmp_path / "labels.csv"
        path.write_text(
            'fine,coarse,description\n'
            'baby,people,\n'
            'snapdragon,,"Antirrhinum is a genus, commonly known as dragon flowers"\n',
            encoding="utf-8",
        )
        records = read_label_csv(path)
        assert records[0] == LabelRecord(fine_label="baby", coarse_label="people")
        assert records[1].description.startswith("Antirrhinum is a genus,")

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "labels.csv"
        path.write_text("name,group\nx,y\n", encoding="utf-8")
        with pytest.raises(ValueError):
            read_label_csv(path)
