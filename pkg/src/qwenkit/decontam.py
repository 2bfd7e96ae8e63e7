"""Contamination analysis between a training corpus and benchmark test sets.

Texts are normalized (lowercased, Unicode punctuation and symbol characters
removed, whitespace-tokenized) and compared two ways:

* train-side: a training document is removed when some test sample shares a
  longest common subsequence of at least ``min_len`` tokens that also covers
  at least ``min_frac`` of the shorter sequence;
* test-side: a test sample is removed when any contiguous n tokens of it
  (default 13) appear verbatim in the training corpus.

Reports mirror a per-test-set "percent contaminated" table.
"""

from __future__ import annotations

import hashlib
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InputError, ParameterError

MODE_TRAIN_LCS = "train-side-lcs"
MODE_TEST_NGRAM = "test-side-13gram"
MODES = (MODE_TRAIN_LCS, MODE_TEST_NGRAM)


@dataclass(frozen=True)
class TokenSeq:
    """Normalized word tokens of one document plus its identifier."""

    tokens: tuple[str, ...]
    source_id: str = ""

    def __len__(self) -> int:
        return len(self.tokens)


def normalize(text: str, source_id: str = "", lowercase: bool = True) -> TokenSeq:
    """Lowercase, strip punctuation (P*) and symbol (S*) characters, split
    on whitespace runs."""
    if lowercase:
        text = text.lower()
    kept = []
    for ch in text:
        if unicodedata.category(ch)[0] in ("P", "S"):
            continue
        kept.append(ch)
    return TokenSeq(tuple("".join(kept).split()), source_id)


def _tokens(seq) -> tuple[str, ...]:
    if isinstance(seq, TokenSeq):
        return seq.tokens
    return tuple(seq)


def lcs_len(a, b) -> int:
    """Token-level longest common subsequence length, O(|a| * |b|) DP."""
    ta, tb = _tokens(a), _tokens(b)
    if len(ta) < len(tb):
        ta, tb = tb, ta
    if not tb:
        return 0
    m = len(tb)
    prev = [0] * (m + 1)
    for x in ta:
        cur = [0] * (m + 1)
        for j in range(1, m + 1):
            if x == tb[j - 1]:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = cur[j - 1] if cur[j - 1] >= prev[j] else prev[j]
        prev = cur
    return prev[m]


def lcs_contaminated(train, test, min_len: int = 13, min_frac: float = 0.6) -> bool:
    """True iff LCS(train, test) >= min_len and >= min_frac * min(|train|, |test|).

    A shared-multiset prefilter (LCS can never exceed the size of the token
    multiset intersection) skips the quadratic DP for clearly clean pairs.
    """
    ta, tb = _tokens(train), _tokens(test)
    if not ta or not tb:
        return False
    shared = sum((Counter(ta) & Counter(tb)).values())
    if shared < min_len:
        return False
    n = lcs_len(ta, tb)
    return n >= min_len and n >= min_frac * min(len(ta), len(tb))


def _window_hash(window: tuple[str, ...]) -> int:
    h = hashlib.blake2b("\x1f".join(window).encode("utf-8"), digest_size=8)
    return int.from_bytes(h.digest(), "little")


class NgramIndex:
    """All length-n token windows of a training corpus, keyed by 64-bit hash.

    Hash hits are confirmed against the referenced document so collisions
    cannot produce false positives.
    """

    def __init__(self, docs, n: int = 13):
        if n < 1:
            raise ParameterError(f"n must be >= 1, got {n}")
        self.n = n
        self._docs = [_tokens(d) for d in docs]
        self._hits: dict[int, list[tuple[int, int]]] = {}
        for di, toks in enumerate(self._docs):
            for start in range(len(toks) - n + 1):
                h = _window_hash(toks[start : start + n])
                self._hits.setdefault(h, []).append((di, start))

    def contains_window(self, window: tuple[str, ...]) -> bool:
        for di, start in self._hits.get(_window_hash(window), ()):
            if self._docs[di][start : start + self.n] == window:
                return True
        return False

    def contains_run(self, tokens: tuple[str, ...]) -> bool:
        """Exact contiguous containment, for sequences shorter than n."""
        k = len(tokens)
        if k == 0:
            return False
        for toks in self._docs:
            for start in range(len(toks) - k + 1):
                if toks[start : start + k] == tokens:
                    return True
        return False


def find_ngram_match(test, index: NgramIndex, n: int = 13) -> int | None:
    """Start offset of the first contaminated window of ``test``, else None.

    Samples shorter than n count as contaminated only when the whole sample
    appears as a contiguous run in some training document (offset 0).
    """
    if n != index.n:
        raise ParameterError(f"index was built for n={index.n}, not n={n}")
    toks = _tokens(test)
    if len(toks) < n:
        return 0 if index.contains_run(toks) else None
    for start in range(len(toks) - n + 1):
        if index.contains_window(toks[start : start + n]):
            return start
    return None


def ngram_contaminated(test, index: NgramIndex, n: int = 13) -> bool:
    return find_ngram_match(test, index, n) is not None


@dataclass(frozen=True)
class SampleVerdict:
    doc_id: str
    rule: str  # "lcs" or "13-gram"
    test_set: str
    counterpart: str
    detail: int  # LCS length, or matched window start


@dataclass(frozen=True)
class SetReport:
    name: str
    total: int
    removed: int

    @property
    def percent(self) -> str:
        return f"{100.0 * self.removed / self.total:.1f}%"


@dataclass
class ContaminationReport:
    mode: str
    sets: list[SetReport]
    verdicts: list[SampleVerdict] = field(default_factory=list)


def filter_corpus(
    train_docs,
    test_sets: dict[str, list[TokenSeq]],
    mode: str,
    *,
    ngram_n: int = 13,
    lcs_min_len: int = 13,
    lcs_min_frac: float = 0.6,
) -> tuple[list[TokenSeq], list[TokenSeq], ContaminationReport]:
    """Remove contaminated documents and report per-test-set statistics.

    train-side-lcs removes training documents (a document matching any test
    sample of any set is removed; per-set rows count training documents
    flagged by that set). test-side-13gram removes test samples matching the
    training n-gram index; kept/removed then hold the flattened samples.
    """
    train_docs = list(train_docs)
    if mode not in MODES:
        raise ParameterError(f"mode must be one of {MODES}, got {mode!r}")
    if not train_docs or not test_sets or all(not s for s in test_sets.values()):
        raise ParameterError("train corpus and test sets must be nonempty")

    verdicts: list[SampleVerdict] = []
    if mode == MODE_TRAIN_LCS:
        per_set_hits = {name: 0 for name in test_sets}
        kept, removed = [], []
        for doc in train_docs:
            doc_removed = False
            for set_name, samples in test_sets.items():
                for sample in samples:
                    if lcs_contaminated(doc, sample, lcs_min_len, lcs_min_frac):
                        per_set_hits[set_name] += 1
                        verdicts.append(SampleVerdict(
                            doc.source_id, "lcs", set_name, sample.source_id,
                            lcs_len(doc, sample)))
                        doc_removed = True
                        break  # one verdict per (doc, set)
            (removed if doc_removed else kept).append(doc)
        sets = [SetReport(name, len(train_docs), per_set_hits[name])
                for name in test_sets]
        return kept, removed, ContaminationReport(mode, sets, verdicts)

    index = NgramIndex(train_docs, ngram_n)
    kept, removed = [], []
    sets = []
    for set_name, samples in test_sets.items():
        hit = 0
        for sample in samples:
            start = find_ngram_match(sample, index, ngram_n)
            if start is None:
                kept.append(sample)
            else:
                hit += 1
                removed.append(sample)
                verdicts.append(SampleVerdict(
                    sample.source_id, "13-gram", set_name, "train-corpus", start))
        sets.append(SetReport(set_name, len(samples), hit))
    return kept, removed, ContaminationReport(mode, sets, verdicts)


def format_report(report: ContaminationReport, fmt: str = "tsv") -> str:
    """Render the per-set table as tab-separated or aligned text."""
    if fmt == "tsv":
        lines = ["test_set\ttotal\tremoved\tpercent"]
        for s in report.sets:
            lines.append(f"{s.name}\t{s.total}\t{s.removed}\t{s.percent}")
        return "\n".join(lines) + "\n"
    if fmt == "text":
        width = max([len("test_set")] + [len(s.name) for s in report.sets])
        lines = [f"{'test_set':<{width}}  {'total':>7}  {'removed':>7}  percent"]
        for s in report.sets:
            lines.append(f"{s.name:<{width}}  {s.total:>7}  {s.removed:>7}  {s.percent}")
        return "\n".join(lines) + "\n"
    raise ParameterError(f"format must be 'tsv' or 'text', got {fmt!r}")


def format_verdicts(report: ContaminationReport) -> str:
    lines = ["doc_id\trule\ttest_set\tcounterpart\tdetail"]
    for v in report.verdicts:
        lines.append(f"{v.doc_id}\t{v.rule}\t{v.test_set}\t{v.counterpart}\t{v.detail}")
    return "\n".join(lines) + "\n"


def load_docs(path, lowercase: bool = True) -> list[TokenSeq]:
    """Load one document per line from a file, or one per *.txt file in a
    directory. Blank lines are skipped."""
    p = Path(path)
    docs: list[TokenSeq] = []
    try:
        if p.is_dir():
            for child in sorted(p.iterdir()):
                if child.is_file():
                    text = child.read_text(encoding="utf-8")
                    docs.append(normalize(text, source_id=child.name, lowercase=lowercase))
        else:
            for lineno, line in enumerate(p.read_text(encoding="utf-8").splitlines(), 1):
                if line.strip():
                    docs.append(normalize(line, source_id=f"{p.name}:{lineno}",
                                          lowercase=lowercase))
    except OSError as exc:
        raise InputError(f"cannot read {p}: {exc}") from exc
    return docs


def load_test_sets(path, lowercase: bool = True) -> dict[str, list[TokenSeq]]:
    """Each file in the directory is one test set, one sample per line."""
    p = Path(path)
    sets: dict[str, list[TokenSeq]] = {}
    try:
        if not p.is_dir():
            raise InputError(f"test sets path {p} must be a directory of text files")
        for child in sorted(p.iterdir()):
            if not child.is_file():
                continue
            samples = []
            for lineno, line in enumerate(child.read_text(encoding="utf-8").splitlines(), 1):
                if line.strip():
                    samples.append(normalize(line, source_id=f"{child.name}:{lineno}",
                                             lowercase=lowercase))
            sets[child.stem] = samples
    except OSError as exc:
        raise InputError(f"cannot read {p}: {exc}") from exc
    return sets
