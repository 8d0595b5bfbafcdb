"""BPE vocabulary training with full character coverage and byte fallback.

A trained vocabulary lays out reserved specials first, then the 256 byte
tokens, then learned tokens ordered by descending frequency (index order is
the frequency ranking used by the analysis module). Training is classic BPE
over a word-frequency table of pre-tokens, with the word-start marker
prepended to word-initial pre-tokens so detokenization is lossless.

The word-start marker is reserved: literal occurrences of the marker
character in corpus text never participate in merges and are encoded through
byte fallback, which keeps encode/decode a true roundtrip on arbitrary input.
"""

from __future__ import annotations

import hashlib
import heapq
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

from .artifacts import FORMAT_VERSION, canonical_json_bytes, dump_artifact, load_artifact
from .corpus import CorpusManifest, DatasetRecord, normalize_line, pretokenize, read_lines
from .errors import ValidationError

WORD_START_MARKER = "▁"
BYTE_TOKENS = tuple(f"<0x{i:02X}>" for i in range(256))
DEFAULT_SPECIALS = ("<pad>", "<bos>", "<eos>", "<unk>", "<mask>")


class _LiteralMarker:
    """Stand-in symbol for a literal marker character found in corpus text."""

    __slots__ = ()

    def __repr__(self) -> str:
        return "<literal-marker>"


LITERAL_MARKER = _LiteralMarker()


@dataclass(frozen=True)
class MergeRule:
    left: str
    right: str
    rank: int
    frequency_at_merge: int

    @property
    def token(self) -> str:
        return self.left + self.right


@dataclass(frozen=True)
class TrainConfig:
    target_size: int
    min_pair_frequency: int = 2
    specials: tuple[str, ...] = DEFAULT_SPECIALS
    word_start_marker: str = WORD_START_MARKER

    def __post_init__(self):
        if self.min_pair_frequency < 1:
            raise ValidationError("min_pair_frequency must be >= 1")
        if len(set(self.specials)) != len(self.specials) or not all(self.specials):
            raise ValidationError("specials must be unique non-empty strings")
        if set(self.specials) & set(BYTE_TOKENS):
            raise ValidationError("specials must not collide with byte tokens")
        if len(self.word_start_marker) != 1:
            raise ValidationError("word_start_marker must be a single character")
        if self.target_size <= len(self.specials) + 256:
            raise ValidationError(
                f"target_size must exceed {len(self.specials) + 256} "
                "(specials + byte tokens)"
            )


@dataclass(frozen=True, eq=False)
class Vocabulary:
    """Immutable token table: specials, byte tokens, then learned tokens."""

    specials: tuple[str, ...]
    byte_tokens: tuple[str, ...]
    learned: tuple[str, ...]
    merges: tuple[MergeRule, ...]
    metadata: dict = field(default_factory=dict)

    @cached_property
    def tokens(self) -> tuple[str, ...]:
        return self.specials + self.byte_tokens + self.learned

    @cached_property
    def index_of(self) -> dict[str, int]:
        return {tok: i for i, tok in enumerate(self.tokens)}

    @cached_property
    def merge_ranks(self) -> dict[tuple[str, str], int]:
        # first rule for a pair wins; duplicates cannot occur in valid training output
        ranks: dict[tuple[str, str], int] = {}
        for rule in self.merges:
            ranks.setdefault((rule.left, rule.right), rule.rank)
        return ranks

    @cached_property
    def fingerprint(self) -> str:
        return hashlib.sha256(canonical_json_bytes(vocabulary_to_payload(self))).hexdigest()

    @property
    def size(self) -> int:
        return len(self.specials) + len(self.byte_tokens) + len(self.learned)

    @property
    def word_start_marker(self) -> str:
        return self.metadata.get("word_start_marker", WORD_START_MARKER)

    @property
    def base_offset(self) -> int:
        """First learned-token index (end of the specials + byte block)."""
        return len(self.specials) + len(self.byte_tokens)

    def token_at(self, index: int) -> str:
        if not 0 <= index < self.size:
            raise ValidationError(f"token index {index} out of range [0, {self.size})")
        return self.tokens[index]

    def byte_token_id(self, byte_value: int) -> int:
        return len(self.specials) + byte_value

    def is_byte_id(self, index: int) -> bool:
        return len(self.specials) <= index < len(self.specials) + 256


def vocabulary_check_failures(vocab: Vocabulary) -> list[str]:
    """Structural invariant violations, empty when the vocabulary is sound."""
    failures = []
    if vocab.byte_tokens != BYTE_TOKENS:
        failures.append("byte token block is not the 256 canonical byte tokens")
    tokens = vocab.tokens
    if len(set(tokens)) != len(tokens):
        failures.append("duplicate token strings")
    for i, rule in enumerate(vocab.merges):
        if rule.rank != i:
            failures.append(f"merge ranks not contiguous at position {i}")
            break
    if any(r.frequency_at_merge < 1 for r in vocab.merges):
        failures.append("merge with non-positive frequency")
    products: set[str] = set()
    for rule in vocab.merges:
        for part in (rule.left, rule.right):
            if len(part) != 1 and part not in products:
                failures.append(
                    f"merge rank {rule.rank} references unknown symbol {part!r}"
                )
        products.add(rule.token)
    learned_set = set(vocab.learned)
    missing = products - learned_set
    if missing:
        failures.append(f"{len(missing)} merge products missing from learned tokens")
    return failures


def validate_vocabulary(vocab: Vocabulary) -> None:
    failures = vocabulary_check_failures(vocab)
    if failures:
        raise ValidationError("invalid vocabulary: " + "; ".join(failures))


def collect_alphabet(
    manifest: CorpusManifest, dataset_ids: list[str]
) -> Counter[str]:
    """Exact per-character corpus frequencies over all pre-tokens."""
    if not dataset_ids:
        raise ValidationError("empty dataset selection")
    alphabet: Counter[str] = Counter()
    for record in manifest.select(dataset_ids):
        for line in read_lines(record):
            for pretok in pretokenize(normalize_line(line)):
                alphabet.update(pretok.text)
    if not alphabet:
        raise ValidationError("empty corpus: no characters found")
    return alphabet


def select_best_pair(
    pair_counts: dict[tuple[str, str], int], min_frequency: int = 1
) -> tuple[str, str] | None:
    """Maximum-count pair, ties broken by lexicographic order on (left, right).

    Returns None when no pair reaches ``min_frequency`` (training terminates).
    """
    best: tuple[str, str] | None = None
    best_count = min_frequency - 1
    for pair, count in pair_counts.items():
        if count > best_count or (count == best_count and best is not None and pair < best):
            best = pair
            best_count = count
    return best


def _word_symbols(text: str, is_word_start: bool, marker: str) -> tuple:
    syms: list = [marker] if is_word_start else []
    for ch in text:
        syms.append(LITERAL_MARKER if ch == marker else ch)
    return tuple(syms)


def _adjacent_pairs(word: tuple) -> Counter:
    pairs: Counter = Counter()
    for a, b in zip(word, word[1:]):
        if isinstance(a, str) and isinstance(b, str):
            pairs[(a, b)] += 1
    return pairs


def _merge_word(word: tuple, left: str, right: str, merged: str) -> tuple:
    out: list = []
    i = 0
    n = len(word)
    while i < n:
        if i + 1 < n and word[i] == left and word[i + 1] == right:
            out.append(merged)
            i += 2
        else:
            out.append(word[i])
            i += 1
    return tuple(out)


def _count_words_for_record(record: DatasetRecord, marker: str) -> Counter:
    words: Counter = Counter()
    for line in read_lines(record):
        for pretok in pretokenize(normalize_line(line)):
            words[_word_symbols(pretok.text, pretok.is_word_start, marker)] += 1
    return words


def build_word_table(
    manifest: CorpusManifest,
    dataset_ids: list[str],
    marker: str = WORD_START_MARKER,
    n_threads: int = 1,
) -> Counter:
    """Frequency table of marker-prefixed pre-token symbol sequences."""
    if not dataset_ids:
        raise ValidationError("empty dataset selection")
    records = manifest.select(dataset_ids)
    table: Counter = Counter()
    if n_threads > 1 and len(records) > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            partials = pool.map(lambda r: _count_words_for_record(r, marker), records)
            for part in partials:  # summed in dataset order; addition is commutative
                table.update(part)
    else:
        for record in records:
            table.update(_count_words_for_record(record, marker))
    return table


def _initial_pair_counts(
    words: list[tuple], counts: list[int], n_threads: int
) -> Counter:
    def count_chunk(chunk: range) -> Counter:
        acc: Counter = Counter()
        for wi in chunk:
            for pair, k in _adjacent_pairs(words[wi]).items():
                acc[pair] += k * counts[wi]
        return acc

    if n_threads > 1 and len(words) > n_threads:
        step = (len(words) + n_threads - 1) // n_threads
        chunks = [range(i, min(i + step, len(words))) for i in range(0, len(words), step)]
        total: Counter = Counter()
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            for part in pool.map(count_chunk, chunks):
                total.update(part)
        return total
    return count_chunk(range(len(words)))


def train(
    manifest: CorpusManifest,
    dataset_ids: list[str],
    config: TrainConfig,
    n_threads: int = 1,
) -> Vocabulary:
    """Train a BPE vocabulary of at most ``config.target_size`` tokens.

    Repeatedly merges the most frequent adjacent symbol pair (ties broken
    lexicographically) until the vocabulary is full or no pair reaches
    ``min_pair_frequency``. Deterministic for fixed (corpus bytes, config),
    independent of ``n_threads``.
    """
    marker = config.word_start_marker
    alphabet = collect_alphabet(manifest, dataset_ids)
    word_table = build_word_table(manifest, dataset_ids, marker, n_threads)

    marker_count = sum(c for w, c in word_table.items() if w and w[0] == marker)
    single_freq: dict[str, int] = {
        ch: freq for ch, freq in alphabet.items() if ch != marker
    }
    single_freq[marker] = max(marker_count, 1)

    room = config.target_size - len(config.specials) - 256
    if len(single_freq) > room:
        raise ValidationError(
            f"coverage overflow: alphabet of {len(single_freq)} characters does not "
            f"fit in {room} learned slots (character coverage may not be relaxed)"
        )

    words: list[tuple] = []
    counts: list[int] = []
    pair_words: dict[tuple[str, str], set[int]] = {}
    for word, count in word_table.items():
        wi = len(words)
        words.append(word)
        counts.append(count)
        for pair in _adjacent_pairs(word):
            pair_words.setdefault(pair, set()).add(wi)

    pair_counts = _initial_pair_counts(words, counts, n_threads)
    heap: list[tuple[int, str, str]] = [
        (-c, left, right) for (left, right), c in pair_counts.items()
    ]
    heapq.heapify(heap)

    reserved = set(config.specials) | set(BYTE_TOKENS)
    learned_freq = dict(single_freq)
    merges: list[MergeRule] = []

    def pop_best() -> tuple[tuple[str, str], int] | None:
        while heap:
            neg, left, right = heapq.heappop(heap)
            pair = (left, right)
            current = pair_counts.get(pair, 0)
            if current != -neg or current < config.min_pair_frequency:
                continue  # stale entry or below threshold
            if left + right in reserved:
                continue  # merging would collide with a reserved token string
            return pair, current
        return None

    while len(learned_freq) < room:
        selected = pop_best()
        if selected is None:
            break
        (left, right), freq = selected
        merged = left + right
        merges.append(MergeRule(left, right, len(merges), freq))
        learned_freq.setdefault(merged, freq)

        for wi in sorted(pair_words.pop((left, right), ())):
            old_word = words[wi]
            new_word = _merge_word(old_word, left, right, merged)
            count = counts[wi]
            old_pairs = _adjacent_pairs(old_word)
            new_pairs = _adjacent_pairs(new_word)
            for pair in set(old_pairs) | set(new_pairs):
                delta = new_pairs.get(pair, 0) - old_pairs.get(pair, 0)
                if delta:
                    updated = pair_counts.get(pair, 0) + delta * count
                    if updated > 0:
                        pair_counts[pair] = updated
                        heapq.heappush(heap, (-updated, pair[0], pair[1]))
                    else:
                        pair_counts.pop(pair, None)
                if new_pairs.get(pair, 0) > 0:
                    pair_words.setdefault(pair, set()).add(wi)
                elif old_pairs.get(pair, 0) > 0:
                    members = pair_words.get(pair)
                    if members is not None:
                        members.discard(wi)
                        if not members:
                            del pair_words[pair]
            words[wi] = new_word

    learned = tuple(sorted(learned_freq, key=lambda tok: (-learned_freq[tok], tok)))
    vocab = Vocabulary(
        specials=tuple(config.specials),
        byte_tokens=BYTE_TOKENS,
        learned=learned,
        merges=tuple(merges),
        metadata={
            "target_size": config.target_size,
            "character_coverage": 1.0,
            "min_pair_frequency": config.min_pair_frequency,
            "dataset_ids": list(dataset_ids),
            "word_start_marker": marker,
        },
    )
    validate_vocabulary(vocab)
    return vocab


def vocabulary_to_payload(vocab: Vocabulary) -> dict:
    return {
        "kind": "vocabulary",
        "format_version": FORMAT_VERSION,
        "specials": list(vocab.specials),
        "byte_fallback": True,
        "learned": list(vocab.learned),
        "merges": [[r.left, r.right, r.frequency_at_merge] for r in vocab.merges],
        "metadata": vocab.metadata,
    }


def vocabulary_from_payload(payload: dict) -> Vocabulary:
    if payload.get("format_version") != FORMAT_VERSION:
        raise ValidationError(
            f"unsupported vocabulary format_version {payload.get('format_version')!r}"
        )
    if not payload.get("byte_fallback", False):
        raise ValidationError("vocabularies without byte fallback are not supported")
    merges = tuple(
        MergeRule(left=left, right=right, rank=i, frequency_at_merge=freq)
        for i, (left, right, freq) in enumerate(payload["merges"])
    )
    return Vocabulary(
        specials=tuple(payload["specials"]),
        byte_tokens=BYTE_TOKENS,
        learned=tuple(payload["learned"]),
        merges=merges,
        metadata=dict(payload.get("metadata", {})),
    )


def save_vocabulary(vocab: Vocabulary, path: str | Path) -> None:
    dump_artifact(vocabulary_to_payload(vocab), path)


def load_vocabulary(path: str | Path) -> Vocabulary:
    vocab = vocabulary_from_payload(load_artifact(path, kind="vocabulary"))
    validate_vocabulary(vocab)
    return vocab
