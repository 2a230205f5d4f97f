"""Byte-level toy tokenizer and chat-turn formatting.

Ids 0..255 are raw bytes; control tokens get the fixed ids below. The
literal text "[BOS]" never maps to the BOS id: BOS is injected only via
add_bos=True. Control markers <start_of_turn>, <end_of_turn> and <eos>
appearing in text are mapped to their control ids, mirroring how reserved
tokenizer symbols behave.
"""

from dataclasses import dataclass
from typing import Sequence

from .errors import ChatFormatError

BOS_ID = 256
EOS_ID = 257
START_OF_TURN_ID = 258
END_OF_TURN_ID = 259
VOCAB_SIZE = 260

START_OF_TURN = "<start_of_turn>"
END_OF_TURN = "<end_of_turn>"
EOS_TEXT = "<eos>"
BOS_TEXT = "[BOS]"  # display form only, never produced by encode()

_CONTROL_STRINGS = {
    START_OF_TURN: START_OF_TURN_ID,
    END_OF_TURN: END_OF_TURN_ID,
    EOS_TEXT: EOS_ID,
}


def encode(text: str, add_bos: bool = False) -> list[int]:
    """UTF-8 bytes plus control-token substitution; BOS only via the flag."""
    ids = [BOS_ID] if add_bos else []
    i = 0
    while i < len(text):
        for marker, token_id in _CONTROL_STRINGS.items():
            if text.startswith(marker, i):
                ids.append(token_id)
                i += len(marker)
                break
        else:
            ch = text[i]
            ids.extend(ch.encode("utf-8"))
            i += 1
    return ids


def tokenize_with_bos(text: str) -> list[int]:
    return encode(text, add_bos=True)


def decode(ids: Sequence[int], show_bos: bool = False) -> str:
    """Inverse of encode; BOS renders as "[BOS]" when show_bos is set."""
    parts: list[str] = []
    byte_run = bytearray()

    def flush():
        nonlocal byte_run
        if byte_run:
            parts.append(byte_run.decode("utf-8", errors="replace"))
            byte_run = bytearray()

    for t in ids:
        if 0 <= t <= 255:
            byte_run.append(t)
            continue
        flush()
        if t == BOS_ID:
            if show_bos:
                parts.append(BOS_TEXT)
        elif t == EOS_ID:
            parts.append(EOS_TEXT)
        elif t == START_OF_TURN_ID:
            parts.append(START_OF_TURN)
        elif t == END_OF_TURN_ID:
            parts.append(END_OF_TURN)
        else:
            raise ValueError(f"unknown token id {t}")
    flush()
    return "".join(parts)


@dataclass(frozen=True)
class ChatTurn:
    role: str  # "user" or "model"
    text: str

    def __post_init__(self):
        if self.role not in ("user", "model"):
            raise ChatFormatError(f"role must be 'user' or 'model', got {self.role!r}")


def format_chat(turns: Sequence[ChatTurn]) -> str:
    """Render a conversation into the generation-prompt template.

    Each turn becomes "<start_of_turn>{role}\\n{text}<end_of_turn>\\n" and a
    trailing "<start_of_turn>model\\n" invites the reply. Turns must
    alternate user/model and end on a user turn; an empty list renders to
    the empty string (the BOS still comes from the tokenizer).
    """
    for prev, cur in zip(turns, turns[1:]):
        if prev.role == cur.role:
            raise ChatFormatError(f"consecutive {cur.role!r} turns do not alternate")
    if turns and turns[-1].role != "user":
        raise ChatFormatError("conversation must end with a user turn")
    parts = [f"{START_OF_TURN}{t.role}\n{t.text}{END_OF_TURN}\n" for t in turns]
    if turns:
        parts.append(f"{START_OF_TURN}model\n")
    return "".join(parts)
