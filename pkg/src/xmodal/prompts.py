"""Anchor prompt construction: basic template plus context augmentation.

Three template kinds are supported.  The printed prompt forms keep literal
curly braces around substituted values; pass ``keep_braces=False`` to
render without them.

    basic         "A photo of a {label}."
    wiki_context  "A photo of {label}. {description}."
    hierarchical  "A photo of a {fine}, categorized as {coarse}."
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyRecordSet, MissingSlot, SampleTooLarge

_SLOT_RE = re.compile(r"<([a-z_]+)>")

_PATTERNS = {
    "basic": "A photo of a <label>.",
    "wiki_context": "A photo of <label>. <description>.",
    "hierarchical": "A photo of a <fine>, categorized as <coarse>.",
}


@dataclass(frozen=True)
class PromptTemplate:
    """A template string with named ``<slot>`` markers."""

    kind: str
    pattern: str
    keep_braces: bool = True

    @classmethod
    def of(cls, kind: str, keep_braces: bool = True) -> "PromptTemplate":
        if kind not in _PATTERNS:
            raise ValueError(f"unknown template kind {kind!r}")
        return cls(kind=kind, pattern=_PATTERNS[kind], keep_braces=keep_braces)

    @property
    def slots(self) -> list[str]:
        return _SLOT_RE.findall(self.pattern)


@dataclass(frozen=True)
class LabelRecord:
    """One class label with optional coarse category and description text."""

    fine_label: str
    coarse_label: str | None = None
    description: str | None = None

    def __post_init__(self):
        if not self.fine_label:
            raise ValueError("fine_label must be non-empty")

    def slot_value(self, slot: str) -> str | None:
        if slot in ("label", "fine"):
            return self.fine_label
        if slot == "coarse":
            return self.coarse_label
        if slot == "description":
            return self.description
        return None


def render_prompt(template: PromptTemplate, record: LabelRecord) -> str:
    """Substitute record fields into the template.

    Substituted values are wrapped in literal braces unless the template
    was built with ``keep_braces=False``.  A single trailing period is
    enforced; values already ending in '.' do not produce '..'.
    """
    out = template.pattern
    for slot in template.slots:
        value = record.slot_value(slot)
        if value is None:
            raise MissingSlot(slot)
        value = value.strip()
        if f"<{slot}>." in out:
            # slot sits before the sentence period: drop the value's own
            # trailing period so the output ends with exactly one
            value = value.rstrip(".").rstrip()
        shown = "{" + value + "}" if template.keep_braces else value
        out = out.replace(f"<{slot}>", shown)
    leftover = _SLOT_RE.search(out)
    if leftover:
        raise MissingSlot(leftover.group(1))
    out = out.strip()
    while out.endswith(".."):
        out = out[:-1]
    if not out.endswith("."):
        out += "."
    return out


def build_prompt_list(
    templates: list[PromptTemplate], records: list[LabelRecord]
) -> list[str]:
    """One prompt per record per template, order-preserving, deduplicated."""
    if not records:
        raise EmptyRecordSet("no label records given")
    seen: set[str] = set()
    prompts: list[str] = []
    for template in templates:
        for record in records:
            text = render_prompt(template, record)
            if text not in seen:
                seen.add(text)
                prompts.append(text)
    return prompts


def sample_prompt_subset(prompts: list[str], k: int, seed: int) -> list[str]:
    """Uniform sample of k prompts without replacement, original order kept."""
    if not 1 <= k <= len(prompts):
        raise SampleTooLarge(f"cannot sample {k} of {len(prompts)} prompts")
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(len(prompts), size=k, replace=False))
    return [prompts[i] for i in idx]


def read_label_csv(path: str | Path) -> list[LabelRecord]:
    """Read label records from a `fine,coarse,description` CSV (RFC 4180).

    Empty coarse/description cells become None.  The header row is
    required and validated.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        expected = ["fine", "coarse", "description"]
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != expected:
            raise ValueError(
                f"label CSV must have header 'fine,coarse,description', got {reader.fieldnames}"
            )
        records = []
        for row in reader:
            records.append(
                LabelRecord(
                    fine_label=row["fine"].strip(),
                    coarse_label=row["coarse"].strip() or None,
                    description=row["description"].strip() or None,
                )
            )
    return records


def write_prompt_list(prompts: list[str], path: str | Path) -> None:
    """One prompt per line (the sidecar format load_bundle accepts)."""
    Path(path).write_text("\n".join(prompts) + "\n", encoding="utf-8")
