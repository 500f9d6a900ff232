"""
Screening candidate pop/cover pairs
===================================

Scraped covers are noisy: some are the wrong song, some are partial.
Two cheap tests catch most junk. Melody chroma accuracy (MCA) checks
that the cover's top line follows the song's vocal pitch; a length
ratio check catches truncated files. A pair is kept only if MCA is
above 0.15 and the lengths differ by less than 20%.
"""

import numpy as np

from pianocover.filtering import (
    F0Contour,
    filter_pair,
    melody_chroma_accuracy,
    midi_topline,
)
from pianocover.midi import Note, NoteSequence

# A pretend vocal line: A4 for a second, then C5. Contours hold one
# frequency per uniformly spaced frame, zero where nobody is singing.
times = np.arange(100) * 0.02
f0 = np.where(times < 1.0, 440.0, 523.25)
f0[:5] = 0.0  # breath before the first word
vocal = F0Contour(times, f0)

# A faithful cover plays the same pitches (A4 is MIDI 69, C5 is 72),
# with some accompaniment below that the top line ignores.
faithful = NoteSequence.build(
    [Note(0.0, 69, 1.0), Note(1.0, 72, 2.0), Note(0.0, 45, 2.0), Note(0.5, 52, 1.5)],
    duration=2.0,
)
mca = melody_chroma_accuracy(vocal, midi_topline(faithful, times))
print(f"faithful cover MCA: {mca:.3f}")

# Octaves do not matter: a cover played an octave down scores the same.
octave_down = NoteSequence.build(
    [Note(n.onset, n.pitch - 12, n.offset) for n in faithful], duration=2.0
)
print(f"octave-down MCA:    {melody_chroma_accuracy(vocal, midi_topline(octave_down, times)):.3f}")

# The wrong song matches only by accident.
wrong = NoteSequence.build([Note(0.0, 66, 2.0)], duration=2.0)
print(f"wrong cover MCA:    {melody_chroma_accuracy(vocal, midi_topline(wrong, times)):.3f}")

# filter_pair combines MCA with the length test into a verdict.
for mca_value, pop_len, cover_len in [(0.82, 180.0, 176.0), (0.82, 180.0, 120.0), (0.10, 180.0, 176.0)]:
    r = filter_pair(mca_value, pop_len, cover_len)
    print(f"mca {mca_value:.2f}, lengths {pop_len:.0f}s/{cover_len:.0f}s -> {r.verdict.value} {r.reasons}")
