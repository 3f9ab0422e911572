"""Byte pair encoding learned from scratch on the training tokens."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

UNK_SYMBOL = "<unk>"


@dataclass
class BpeModel:
    """Ordered merge list plus the symbol vocabulary it induces."""

    merges: list[tuple[str, str]] = field(default_factory=list)
    symbols: set[str] = field(default_factory=set)

    def segment(self, word: str) -> list[str]:
        """Split a word into subword symbols by replaying the merges in order.

        Characters never seen during learning map to the UNK symbol, so
        segmentation cannot fail.
        """
        parts = [c if c in self.symbols else UNK_SYMBOL for c in word]
        for left, right in self.merges:
            if len(parts) < 2:
                break
            merged = []
            i = 0
            while i < len(parts):
                if i + 1 < len(parts) and parts[i] == left and parts[i + 1] == right:
                    merged.append(left + right)
                    i += 2
                else:
                    merged.append(parts[i])
                    i += 1
            parts = merged
        return parts


def learn_bpe(tokens, num_merges: int) -> BpeModel:
    """Greedy BPE: repeatedly merge the most frequent adjacent symbol pair.

    Ties break lexicographically for determinism.
    """
    if num_merges < 0:
        raise ValueError("num_merges must be >= 0")
    word_freq = Counter(tokens)
    words = {w: list(w) for w in word_freq}
    symbols = {c for w in word_freq for c in w}
    symbols.add(UNK_SYMBOL)
    merges: list[tuple[str, str]] = []
    for _ in range(num_merges):
        pairs: Counter = Counter()
        for w, parts in words.items():
            f = word_freq[w]
            for a, b in zip(parts, parts[1:]):
                pairs[(a, b)] += f
        if not pairs:
            break
        best_count = max(pairs.values())
        pair = min(p for p, c in pairs.items() if c == best_count)
        merges.append(pair)
        left, right = pair
        symbols.add(left + right)
        for w, parts in words.items():
            if len(parts) < 2:
                continue
            merged = []
            i = 0
            while i < len(parts):
                if i + 1 < len(parts) and parts[i] == left and parts[i + 1] == right:
                    merged.append(left + right)
                    i += 2
                else:
                    merged.append(parts[i])
                    i += 1
            words[w] = merged
    return BpeModel(merges=merges, symbols=symbols)
