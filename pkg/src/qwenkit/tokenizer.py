"""Byte-level byte-pair encoding: trainer, encoder, decoder, metrics.

The base alphabet is the 256 bytes, so any byte string encodes losslessly
and decodes back bit-exactly, invalid UTF-8 included. Training greedily
merges the most frequent adjacent token pair inside word boundaries; ties
prefer the lexicographically smaller merged byte string, which makes
training deterministic without a seed.

Words are maximal runs of non-whitespace bytes with any preceding ASCII
whitespace run attached (a trailing whitespace run forms a final word of its
own). Merges never cross word boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import FormatError, InputError, ParameterError

DEFAULT_CONTROL_TOKENS = ("<|im_start|>", "<|im_end|>", "<|endoftext|>")

_WHITESPACE = frozenset(b" \t\n\r\x0b\x0c")


@dataclass
class BpeVocab:
    """Merge list plus derived token tables.

    Regular ids are 0..255 for the single bytes followed by one id per merge,
    in training order. Control ids come after all regular ids and decode to
    empty byte strings. Byte strings and regular ids are in bijection.
    """

    merges: list[tuple[int, int]]
    token_bytes: list[bytes]
    control_names: tuple[str, ...]
    token_to_id: dict[bytes, int] = field(repr=False)

    @property
    def n_regular(self) -> int:
        return len(self.token_bytes)

    @property
    def vocab_size(self) -> int:
        return self.n_regular + len(self.control_names)

    def control_id(self, name: str) -> int:
        try:
            return self.n_regular + self.control_names.index(name)
        except ValueError:
            raise InputError(f"unknown control token {name!r}") from None


def _build_vocab(merges: list[tuple[int, int]], control_names) -> BpeVocab:
    control_names = tuple(control_names)
    for name in control_names:
        if not name or any(c.isspace() for c in name):
            raise ParameterError(f"control token name {name!r} must be nonempty "
                                 "and contain no whitespace")
    if len(set(control_names)) != len(control_names):
        raise ParameterError("control token names must be unique")
    token_bytes = [bytes([b]) for b in range(256)]
    token_to_id = {tb: i for i, tb in enumerate(token_bytes)}
    for k, (left, right) in enumerate(merges):
        limit = 256 + k
        if not (0 <= left < limit and 0 <= right < limit):
            raise FormatError(
                f"merge {k} references tokens ({left}, {right}) not yet defined"
            )
        merged = token_bytes[left] + token_bytes[right]
        if merged in token_to_id:
            raise FormatError(
                f"merge {k} produces duplicate token byte string {merged!r}"
            )
        token_to_id[merged] = len(token_bytes)
        token_bytes.append(merged)
    return BpeVocab(list(merges), token_bytes, control_names, token_to_id)


def base_vocab(control_names=DEFAULT_CONTROL_TOKENS) -> BpeVocab:
    """Merge-free vocabulary: the 256 bytes plus control tokens."""
    return _build_vocab([], control_names)


def _as_bytes(text) -> bytes:
    if isinstance(text, str):
        return text.encode("utf-8")
    return bytes(text)


def split_words(data: bytes) -> list[bytes]:
    """Split at non-whitespace to whitespace transitions; whitespace runs attach
    to the following word."""
    words = []
    start = 0
    for i in range(1, len(data)):
        if data[i] in _WHITESPACE and data[i - 1] not in _WHITESPACE:
            words.append(data[start:i])
            start = i
    if len(data) > start:
        words.append(data[start:])
    return words


def _merge_once(word: tuple[int, ...], pair: tuple[int, int], new_id: int) -> tuple[int, ...]:
    out = []
    i = 0
    n = len(word)
    while i < n:
        if i + 1 < n and word[i] == pair[0] and word[i + 1] == pair[1]:
            out.append(new_id)
            i += 2
        else:
            out.append(word[i])
            i += 1
    return tuple(out)


def bpe_train(corpus, target_vocab: int, control_names=DEFAULT_CONTROL_TOKENS) -> BpeVocab:
    """Train a vocabulary of up to ``target_vocab`` ids on a list of byte strings.

    Stops early when no adjacent pair occurs at least twice. A candidate pair
    whose concatenation collides with an existing token's byte string is
    skipped so byte strings stay unique.
    """
    control_names = tuple(control_names)
    if target_vocab < 256 + len(control_names):
        raise ParameterError(
            f"target_vocab must be at least 256 + {len(control_names)} control "
            f"tokens, got {target_vocab}"
        )
    word_counts: dict[tuple[int, ...], int] = {}
    for doc in corpus:
        for word in split_words(_as_bytes(doc)):
            key = tuple(word)
            word_counts[key] = word_counts.get(key, 0) + 1

    token_bytes = [bytes([b]) for b in range(256)]
    existing = set(token_bytes)
    merges: list[tuple[int, int]] = []
    while len(token_bytes) + len(control_names) < target_vocab:
        pair_counts: dict[tuple[int, int], int] = {}
        for word, count in word_counts.items():
            for a, b in zip(word, word[1:]):
                pair_counts[(a, b)] = pair_counts.get((a, b), 0) + count
        best = None
        best_key = None
        for pair, count in pair_counts.items():
            if count < 2:
                continue
            merged = token_bytes[pair[0]] + token_bytes[pair[1]]
            if merged in existing:
                continue
            key = (-count, merged, token_bytes[pair[0]])
            if best_key is None or key < best_key:
                best_key = key
                best = pair
        if best is None:
            break
        new_id = len(token_bytes)
        merged = token_bytes[best[0]] + token_bytes[best[1]]
        token_bytes.append(merged)
        existing.add(merged)
        merges.append(best)
        rewritten: dict[tuple[int, ...], int] = {}
        for word, count in word_counts.items():
            new_word = _merge_once(word, best, new_id)
            rewritten[new_word] = rewritten.get(new_word, 0) + count
        word_counts = rewritten
    return _build_vocab(merges, control_names)


def encode(vocab: BpeVocab, text) -> list[int]:
    """Token ids for any byte string; merges apply in training order to fixpoint."""
    data = _as_bytes(text)
    out: list[int] = []
    for word in split_words(data):
        ids: tuple[int, ...] = tuple(word)
        for k, pair in enumerate(vocab.merges):
            new_id = 256 + k
            while True:
                merged = _merge_once(ids, pair, new_id)
                if merged == ids:
                    break
                ids = merged
        out.extend(ids)
    return out


def decode(vocab: BpeVocab, ids) -> bytes:
    """Concatenated token byte strings; control ids contribute nothing."""
    parts = []
    for t in ids:
        t = int(t)
        if 0 <= t < vocab.n_regular:
            parts.append(vocab.token_bytes[t])
        elif vocab.n_regular <= t < vocab.vocab_size:
            continue
        else:
            raise InputError(f"token id {t} outside vocabulary of {vocab.vocab_size}")
    return b"".join(parts)


def compression_rate(vocab: BpeVocab, corpus) -> float:
    """Corpus bytes per token; 1.0 for a merge-free vocabulary."""
    docs = [_as_bytes(doc) for doc in corpus]
    total_bytes = sum(len(d) for d in docs)
    if not docs or total_bytes == 0:
        raise ParameterError("corpus must contain at least one nonempty document")
    total_tokens = sum(len(encode(vocab, d)) for d in docs)
    return total_bytes / total_tokens


def save_vocab(vocab: BpeVocab, path) -> None:
    """Serialize as UTF-8 lines: a version header, one merge per line as hex
    byte strings, then control token names."""
    lines = ["qwenkit-bpe v1"]
    for left, right in vocab.merges:
        lines.append(
            f"merge {vocab.token_bytes[left].hex()} {vocab.token_bytes[right].hex()}"
        )
    for name in vocab.control_names:
        lines.append(f"control {name}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_vocab(path) -> BpeVocab:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "qwenkit-bpe v1":
        raise FormatError("vocab file must start with 'qwenkit-bpe v1'")
    token_to_id = {bytes([b]): b for b in range(256)}
    merges: list[tuple[int, int]] = []
    controls: list[str] = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        kind, _, rest = line.partition(" ")
        if kind == "merge":
            if controls:
                raise FormatError(f"line {lineno}: merge after control section")
            parts = rest.split()
            if len(parts) != 2:
                raise FormatError(f"line {lineno}: expected two hex byte strings")
            try:
                left_b, right_b = bytes.fromhex(parts[0]), bytes.fromhex(parts[1])
            except ValueError:
                raise FormatError(f"line {lineno}: invalid hex") from None
            if left_b not in token_to_id or right_b not in token_to_id:
                raise FormatError(
                    f"line {lineno}: merge references unknown token byte strings"
                )
            left, right = token_to_id[left_b], token_to_id[right_b]
            merged = left_b + right_b
            if merged in token_to_id:
                raise FormatError(f"line {lineno}: duplicate token byte string")
            token_to_id[merged] = 256 + len(merges)
            merges.append((left, right))
        elif kind == "control":
            if not rest:
                raise FormatError(f"line {lineno}: control token needs a name")
            controls.append(rest)
        else:
            raise FormatError(f"line {lineno}: unknown record {kind!r}")
    return _build_vocab(merges, controls)
