"""
The 232-token language of piano covers
======================================

The decoder speaks a tiny event language. Four singletons (pad, eos,
note-on, note-off), 100 beat shifts that advance a time cursor by 1 to
100 half-beats, and 128 pitches that fire at the cursor in the current
on/off state: 232 ids in all. Pieces are encoded in 8-half-beat
segments; notes can cross segment edges and are carried when stitching.
"""

from pianocover.midi import Note, NoteSequence, TimeUnit
from pianocover.tokenizer import (
    VOCAB_SIZE,
    encode_piece,
    encode_segment,
    stitch,
    symbol,
)

print(f"vocabulary size: {VOCAB_SIZE}")

# One segment: a C-E dyad on slot 0 released on slot 4, then a melody
# note on slot 4 held past the segment edge.
segment = NoteSequence.build(
    [Note(0, 60, 4), Note(0, 64, 4), Note(4, 72, 10)], TimeUnit.HALF_BEATS
)
tokens = encode_segment(segment)
print("tokens:", " ".join("/".join(map(str, symbol(t))) for t in tokens.ids))

# The note held past slot 8 produced no note-off above; the off arrives
# in the next segment. encode_piece splits and encodes in one call.
piece = NoteSequence.build(
    [Note(0, 60, 4), Note(0, 64, 4), Note(4, 72, 10), Note(10, 65, 15)],
    TimeUnit.HALF_BEATS,
)
segments = encode_piece(piece)
print(f"piece of {piece.duration} half-beats -> {len(segments)} segments "
      f"of {[len(s.ids) for s in segments]} tokens")

# stitch decodes the segments back and reconnects carried notes.
rebuilt = stitch(segments)
print(f"round trip exact: {rebuilt.notes == piece.notes}")
