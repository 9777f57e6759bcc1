"""Word tokenization with character offsets.

Deterministic and vocabulary-free: maximal runs of alphanumeric characters
form one token, every other non-whitespace character is its own token, and
whitespace only separates.  Offsets always index into the sequence's source
text so that structure-table coordinates are reproducible and auditable.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import AlignmentError


@dataclass(frozen=True)
class Token:
    """One token with [char_start, char_end) offsets into the source text.

    Special tokens (markers such as "[CLS]") carry no source offsets and
    use char_start == char_end == 0 with is_special set.
    """

    text: str
    char_start: int
    char_end: int
    is_special: bool = False


@dataclass(frozen=True)
class TokenSequence:
    """An ordered run of tokens over one source string."""

    tokens: tuple[Token, ...]
    source_text: str

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)

    def __getitem__(self, index: int) -> Token:
        return self.tokens[index]

    def reconstruct(self) -> str:
        """Rebuild the source text from non-special tokens and their gaps."""
        pieces = []
        cursor = 0
        for tok in self.tokens:
            if tok.is_special:
                continue
            pieces.append(self.source_text[cursor:tok.char_start])
            pieces.append(tok.text)
            cursor = tok.char_end
        pieces.append(self.source_text[cursor:])
        return "".join(pieces)


def tokenize(text: str) -> TokenSequence:
    """Split text into offset-carrying tokens.

    Every non-whitespace character lands in exactly one token; alphanumeric
    runs are kept together and anything else becomes a single-character
    token.  Empty input yields an empty sequence.
    """
    tokens = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
        elif ch.isalnum():
            j = i + 1
            while j < n and text[j].isalnum():
                j += 1
            tokens.append(Token(text[i:j], i, j))
            i = j
        else:
            tokens.append(Token(ch, i, i + 1))
            i += 1
    return TokenSequence(tuple(tokens), text)


def token_span_of_char_span(seq: TokenSequence, char_start: int, char_end: int) -> tuple[int, int]:
    """Map a [char_start, char_end) range onto inclusive token indices.

    The range must begin on a token start and finish on a token end;
    anything else raises AlignmentError naming the offending boundary.
    """
    if char_end <= char_start:
        raise AlignmentError(
            f"char span ({char_start}, {char_end}) is empty or inverted"
        )
    start_index = None
    end_index = None
    for idx, tok in enumerate(seq.tokens):
        if tok.is_special:
            continue
        if tok.char_start == char_start and start_index is None:
            start_index = idx
        if tok.char_end == char_end:
            end_index = idx
    if start_index is None:
        raise AlignmentError(
            f"char offset {char_start} is not the start of any token"
        )
    if end_index is None:
        raise AlignmentError(
            f"char offset {char_end} is not the end of any token"
        )
    if end_index < start_index:
        raise AlignmentError(
            f"char span ({char_start}, {char_end}) ends before it starts at token granularity"
        )
    return start_index, end_index
