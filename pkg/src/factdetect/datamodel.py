"""Core domain types, the normalized JSONL interchange format, and dataset adapters.

The normalized record is the canonical interchange for every downstream stage:
one JSON object per line with exact keys ``id``, ``claim``, ``evidence``,
``title`` (nullable), ``label`` (nullable), ``dataset``. Adapters convert
SciFact-style claims+corpus files and HealthVer-style flat files into it.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Any, Iterable


class DataError(ValueError):
    """Raised for malformed or inconsistent dataset files."""


class Verdict(Enum):
    """Three-way verdict for a claim-evidence pair."""

    SUPPORTED = "SUPPORT"
    CONTRADICTED = "CONTRADICT"
    NEI = "NEI"

    @classmethod
    def from_str(cls, s: str) -> "Verdict":
        for v in cls:
            if v.value == s:
                return v
        raise DataError(f"unknown label: {s!r}")

    def __str__(self) -> str:
        return self.value


class BinaryAnswer(Enum):
    """Yes/No answer used in factuality mode."""

    YES = "YES"
    NO = "NO"

    @classmethod
    def from_str(cls, s: str) -> "BinaryAnswer":
        for v in cls:
            if v.value == s:
                return v
        raise DataError(f"unknown answer: {s!r}")

    def __str__(self) -> str:
        return self.value


class FactLabel(Enum):
    """Weak label attached to a short fact."""

    IMPORTANT = "important"
    NOT_IMPORTANT = "not_important"

    @classmethod
    def from_str(cls, s: str) -> "FactLabel":
        for v in cls:
            if v.value == s:
                return v
        raise DataError(f"unknown fact label: {s!r}")

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class ClaimEvidencePair:
    """One claim with its gold evidence text; the unit of all processing."""

    id: str
    claim: str
    evidence: str
    title: str | None = None
    gold: Verdict | None = None
    dataset: str = ""

    def to_record(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "claim": self.claim,
            "evidence": self.evidence,
            "title": self.title,
            "label": self.gold.value if self.gold is not None else None,
            "dataset": self.dataset,
        }

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> "ClaimEvidencePair":
        label = rec.get("label")
        return cls(
            id=str(rec["id"]),
            claim=rec["claim"],
            evidence=rec["evidence"],
            title=rec.get("title"),
            gold=Verdict.from_str(label) if label is not None else None,
            dataset=rec.get("dataset", ""),
        )


@dataclass(frozen=True)
class AnswerPair:
    """Matching phrase pair extracted from claim and evidence.

    ``phrase_in_claim`` is diagnostic only: the claim phrase is free-form LLM
    output and need not literally occur in the claim text.
    """

    claim_phrase: str
    evidence_phrase: str
    index: int
    phrase_in_claim: bool = True


@dataclass(frozen=True)
class ShortFact:
    """One distilled sentence with its generation provenance and weak label."""

    text: str
    question: str = ""
    claim_phrase: str = ""
    evidence_phrase: str = ""
    sim: float | None = None
    label: FactLabel | None = None

    def dedup_key(self) -> str:
        return normalize_text(self.text)

    def to_record(self) -> dict[str, Any]:
        return {
            "text": self.text,
            "question": self.question,
            "claim_phrase": self.claim_phrase,
            "evidence_phrase": self.evidence_phrase,
            "sim": self.sim,
            "label": self.label.value if self.label is not None else None,
        }

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> "ShortFact":
        label = rec.get("label")
        return cls(
            text=rec["text"],
            question=rec.get("question", ""),
            claim_phrase=rec.get("claim_phrase", ""),
            evidence_phrase=rec.get("evidence_phrase", ""),
            sim=rec.get("sim"),
            label=FactLabel.from_str(label) if label is not None else None,
        )

    def with_label(self, sim: float, label: FactLabel) -> "ShortFact":
        return replace(self, sim=sim, label=label)


@dataclass(frozen=True)
class Prediction:
    """One strategy's verdict for one pair in one run."""

    pair_id: str
    strategy: str
    model: str
    run: int
    verdict: Verdict | BinaryAnswer
    relevant_facts: tuple[str, ...] = ()
    explanation: str | None = None
    raw: str = ""
    parse_ok: bool = True
    fallback: bool = False

    def to_record(self) -> dict[str, Any]:
        return {
            "pair_id": self.pair_id,
            "strategy": self.strategy,
            "model": self.model,
            "run": self.run,
            "verdict": self.verdict.value,
            "relevant_facts": list(self.relevant_facts),
            "explanation": self.explanation,
            "raw": self.raw,
            "parse_ok": self.parse_ok,
            "fallback": self.fallback,
        }

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> "Prediction":
        raw_verdict = rec["verdict"]
        verdict: Verdict | BinaryAnswer
        if raw_verdict in ("YES", "NO"):
            verdict = BinaryAnswer.from_str(raw_verdict)
        else:
            verdict = Verdict.from_str(raw_verdict)
        return cls(
            pair_id=rec["pair_id"],
            strategy=rec["strategy"],
            model=rec.get("model", ""),
            run=int(rec.get("run", 1)),
            verdict=verdict,
            relevant_facts=tuple(rec.get("relevant_facts") or ()),
            explanation=rec.get("explanation"),
            raw=rec.get("raw", ""),
            parse_ok=bool(rec.get("parse_ok", True)),
            fallback=bool(rec.get("fallback", False)),
        )


def normalize_text(text: str) -> str:
    """Lowercase and collapse whitespace; the dedup / comparison key for facts."""
    return re.sub(r"\s+", " ", text.strip().lower())


NORMALIZED_KEYS = ("id", "claim", "evidence", "title", "label", "dataset")

# HealthVer-style label spellings accepted by the flat-file adapter.
_HEALTHVER_LABELS = {
    "supports": Verdict.SUPPORTED,
    "support": Verdict.SUPPORTED,
    "supported": Verdict.SUPPORTED,
    "refutes": Verdict.CONTRADICTED,
    "refute": Verdict.CONTRADICTED,
    "contradict": Verdict.CONTRADICTED,
    "contradicted": Verdict.CONTRADICTED,
    "neutral": Verdict.NEI,
    "nei": Verdict.NEI,
    "not enough info": Verdict.NEI,
}


def validate_pair(pair: ClaimEvidencePair) -> list[str]:
    """Return a list of invariant violations; empty iff the pair is valid."""
    diagnostics = []
    if not pair.id.strip():
        diagnostics.append("empty id")
    if not pair.claim.strip():
        diagnostics.append("empty claim")
    if not pair.evidence.strip():
        diagnostics.append("empty evidence")
    return diagnostics


def _iter_jsonl(path: Path) -> Iterable[tuple[int, dict[str, Any]]]:
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}: malformed JSON on line {lineno}: {e}") from e
            yield lineno, obj


def _check_unique_ids(pairs: list[ClaimEvidencePair], path: Path) -> None:
    seen: set[str] = set()
    for p in pairs:
        if p.id in seen:
            raise DataError(f"{path}: duplicate id {p.id!r}")
        seen.add(p.id)


def _load_normalized(path: Path) -> list[ClaimEvidencePair]:
    pairs = []
    for lineno, rec in _iter_jsonl(path):
        if "schema_version" in rec:
            continue  # optional metadata header emitted by CLI commands
        try:
            pair = ClaimEvidencePair.from_record(rec)
        except KeyError as e:
            raise DataError(f"{path}: line {lineno}: missing field {e}") from e
        problems = validate_pair(pair)
        if problems:
            raise DataError(f"{path}: line {lineno}: {'; '.join(problems)}")
        pairs.append(pair)
    return pairs


def _load_scifact(path: Path, corpus: Path | None) -> list[ClaimEvidencePair]:
    """Join a SciFact claims file with its corpus, one pair per evidence set.

    Multi-sentence evidence sets are concatenated with a single space.
    """
    if corpus is None:
        raise DataError("scifact format requires a corpus file")
    docs: dict[str, dict[str, Any]] = {}
    for _, rec in _iter_jsonl(Path(corpus)):
        docs[str(rec["doc_id"])] = rec

    claims = [rec for _, rec in _iter_jsonl(path)]
    if claims and not any("evidence" in rec for rec in claims):
        raise DataError(
            f"{path}: no claim carries gold evidence; this looks like the SciFact "
            "test split, which ships without gold CE pairs — use the dev split"
        )

    pairs = []
    for rec in claims:
        claim_id = rec.get("id")
        evidence = rec.get("evidence") or {}
        for doc_id, sets in evidence.items():
            if doc_id not in docs:
                raise DataError(f"{path}: claim {claim_id}: unknown doc_id {doc_id!r}")
            doc = docs[doc_id]
            sentences = doc.get("abstract", [])
            for k, ev_set in enumerate(sets):
                idxs = ev_set.get("sentences", [])
                try:
                    text = " ".join(sentences[i].strip() for i in idxs)
                except IndexError as e:
                    raise DataError(
                        f"{path}: claim {claim_id}: sentence index out of range for doc {doc_id}"
                    ) from e
                label = ev_set.get("label", "")
                gold = {
                    "SUPPORT": Verdict.SUPPORTED,
                    "CONTRADICT": Verdict.CONTRADICTED,
                }.get(label)
                if gold is None:
                    raise DataError(f"{path}: claim {claim_id}: unknown label {label!r}")
                pairs.append(
                    ClaimEvidencePair(
                        id=f"{claim_id}__{doc_id}__{k}",
                        claim=rec["claim"],
                        evidence=text,
                        title=doc.get("title"),
                        gold=gold,
                        dataset="scifact",
                    )
                )
    return pairs


def _load_healthver(path: Path) -> list[ClaimEvidencePair]:
    """Load a HealthVer-style flat file (CSV, or JSONL with the same columns)."""
    rows: list[tuple[int, dict[str, Any]]]
    if path.suffix.lower() == ".csv":
        with open(path, encoding="utf-8", newline="") as f:
            rows = list(enumerate(csv.DictReader(f), start=2))
    else:
        rows = list(_iter_jsonl(path))

    pairs = []
    for lineno, rec in rows:
        label_raw = str(rec.get("label", "")).strip().lower()
        gold = _HEALTHVER_LABELS.get(label_raw)
        if gold is None:
            raise DataError(f"{path}: line {lineno}: unknown label {rec.get('label')!r}")
        pair_id = str(rec.get("id", "")).strip() or f"healthver-{lineno}"
        pairs.append(
            ClaimEvidencePair(
                id=pair_id,
                claim=str(rec["claim"]).strip(),
                evidence=str(rec["evidence"]).strip(),
                title=rec.get("title") or None,
                gold=gold,
                dataset="healthver",
            )
        )
    return pairs


def load_pairs(
    path: str | Path,
    format: str = "normalized",
    corpus: str | Path | None = None,
) -> list[ClaimEvidencePair]:
    """Load claim-evidence pairs from ``path``.

    ``format`` is one of ``normalized``, ``scifact`` (requires ``corpus``) or
    ``healthver``. Ordering is preserved; every record is validated and ids
    must be unique within the file.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    if format == "normalized":
        pairs = _load_normalized(path)
    elif format == "scifact":
        pairs = _load_scifact(path, Path(corpus) if corpus else None)
    elif format == "healthver":
        pairs = _load_healthver(path)
    else:
        raise DataError(f"unknown dataset format: {format!r}")
    for pair in pairs:
        problems = validate_pair(pair)
        if problems:
            raise DataError(f"{path}: pair {pair.id!r}: {'; '.join(problems)}")
    _check_unique_ids(pairs, path)
    return pairs


def write_jsonl(records: Iterable[Any], path: str | Path) -> None:
    """Write records as compact JSON, one per line, UTF-8, trailing newline.

    Records may be dicts or objects exposing ``to_record()``.
    """
    path = Path(path)
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            obj = rec.to_record() if hasattr(rec, "to_record") else rec
            f.write(json.dumps(obj, ensure_ascii=False, separators=(",", ":")))
            f.write("\n")


def read_jsonl(path: str | Path) -> list[dict[str, Any]]:
    """Read a JSONL file into a list of dicts (metadata line included if present)."""
    return [rec for _, rec in _iter_jsonl(Path(path))]
