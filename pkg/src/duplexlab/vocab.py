"""Token-id layout shared by the world, composer, model, and engine.

One duplex timeline step is 160 ms nominal and carries one text token, one
audio group of G tokens, and one user entry (a 2-unit acoustic pair, a prompt
marker, or silence).
"""

from __future__ import annotations

from dataclasses import dataclass

MS_PER_STEP = 160
UNITS_PER_STEP = 2

# user-side entries (own embedding table, never prediction targets)
USER_WAIT = 0
PROMPT_ASR = 1
PROMPT_TTS = 2
PROMPT_DIALOG = 3
USER_EMBED_SIZE = 4


@dataclass(frozen=True)
class Vocab:
    """Derived id layout for a given content-vocabulary sizing."""

    text_size: int = 64       # content text tokens, ids 0..text_size-1
    audio_size: int = 32      # content audio tokens
    units: int = 16           # acoustic units (encoder input alphabet)

    @property
    def qstart(self) -> int:
        return 0

    @property
    def qa_pool(self) -> range:
        return range(1, self.text_size - 8)

    @property
    def backchannels(self) -> range:
        return range(self.text_size - 8, self.text_size - 4)

    @property
    def fillers(self) -> range:
        return range(self.text_size - 4, self.text_size)

    # text-stream specials
    @property
    def text_wait(self) -> int:
        return self.text_size

    @property
    def text_int(self) -> int:
        return self.text_size + 1

    @property
    def text_bos(self) -> int:
        return self.text_size + 2

    @property
    def text_stream_size(self) -> int:
        return self.text_size + 3

    # audio-stream specials
    @property
    def audio_wait(self) -> int:
        return self.audio_size

    @property
    def audio_int(self) -> int:
        return self.audio_size + 1

    @property
    def audio_bos(self) -> int:
        return self.audio_size + 2

    @property
    def audio_stream_size(self) -> int:
        return self.audio_size + 3

    def is_text_content(self, tok: int) -> bool:
        return 0 <= tok < self.text_size
