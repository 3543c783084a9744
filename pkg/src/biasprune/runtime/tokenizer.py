"""Byte-level tokenizer with a fixed piece table.

Ids 0-255 are raw bytes, followed by three special tokens and then the
multi-byte pieces listed in ``resources/merges.txt``. Encoding is greedy
longest-match over the pieces, falling back to single bytes, so every
string is encodable and decoding is an exact inverse.
"""

from __future__ import annotations

import unicodedata
from functools import lru_cache
from importlib import resources

from ..errors import EmptyInputError

PAD_ID = 256
BOS_ID = 257
EOS_ID = 258
N_SPECIAL = 3
FIRST_PIECE_ID = 256 + N_SPECIAL


class ByteTokenizer:
    def __init__(self, pieces: list[str]) -> None:
        encoded = [p.encode("utf-8") for p in pieces]
        if len(set(encoded)) != len(encoded):
            raise ValueError("duplicate pieces in merge table")
        if any(len(p) < 2 for p in encoded):
            raise ValueError("pieces must span at least two bytes")
        self.pieces = list(pieces)
        self._piece_bytes = encoded
        self._piece_ids = {p: FIRST_PIECE_ID + i for i, p in enumerate(encoded)}
        self._max_len = max((len(p) for p in encoded), default=1)

    @property
    def vocab_size(self) -> int:
        return FIRST_PIECE_ID + len(self.pieces)

    def encode(self, text: str) -> list[int]:
        text = unicodedata.normalize("NFC", text)
        if not text:
            raise EmptyInputError("cannot tokenize empty text")
        data = text.encode("utf-8")
        ids: list[int] = []
        i = 0
        while i < len(data):
            for size in range(min(self._max_len, len(data) - i), 1, -1):
                piece_id = self._piece_ids.get(data[i : i + size])
                if piece_id is not None:
                    ids.append(piece_id)
                    i += size
                    break
            else:
                ids.append(data[i])
                i += 1
        return ids

    def decode(self, ids: list[int]) -> str:
        out = bytearray()
        for tok in ids:
            if tok < 256:
                out.append(tok)
            elif tok < FIRST_PIECE_ID:
                continue
            else:
                out.extend(self._piece_bytes[tok - FIRST_PIECE_ID])
        return out.decode("utf-8")

    def piece_id(self, piece: str) -> int:
        return self._piece_ids[piece.encode("utf-8")]


@lru_cache(maxsize=1)
def default_tokenizer() -> ByteTokenizer:
    table = resources.files("biasprune.resources").joinpath("merges.txt").read_text(encoding="utf-8")
    pieces = [line for line in table.splitlines() if line and not line.startswith("#")]
    return ByteTokenizer(pieces)


@lru_cache(maxsize=8192)
def _cached_encode(text: str) -> tuple[int, ...]:
    return tuple(default_tokenizer().encode(text))


def tokenize(text: str) -> list[int]:
    """Encode with the default piece table (memoised; prompts repeat across passes)."""
    return list(_cached_encode(text))


def detokenize(ids: list[int]) -> str:
    return default_tokenizer().decode(ids)
