"""
Beat grids and half-beat quantization
=====================================

Cover arrangements are written on a musical grid, not a wall-clock one.
A BeatGrid holds detected beat times in seconds; interleaving midpoints
gives the half-beat grid (two slots per beat) that every note snaps to.
"""

import numpy as np

from pianocover.beats import BeatGrid, halfbeats_to_seconds, quantize
from pianocover.midi import Note, NoteSequence, TimeUnit

# Eight beats of a slightly loose 100 BPM performance.
beat_times = 0.5 + 0.6 * np.arange(8) + np.random.default_rng(0).normal(0, 0.01, 8).cumsum()
grid = BeatGrid(np.sort(beat_times))
print(f"{len(grid)} beats -> {len(grid.half_beats)} half-beat slots")
print("first slots:", np.round(grid.half_beats[:5], 3))

# Quantize a played phrase. Times move to the nearest half-beat index;
# the result is a new sequence whose unit is half-beats, not seconds.
phrase = NoteSequence.build(
    [Note(0.52, 60, 1.08), Note(1.13, 64, 1.67), Note(1.72, 67, 2.95)],
    TimeUnit.SECONDS,
)
on_grid = quantize(phrase, grid)
for before, after in zip(phrase, on_grid):
    print(f"  {before.onset:.2f}s..{before.offset:.2f}s -> slots {after.onset}..{after.offset}")

# A note too short to span a slot would quantize to zero length, so its
# offset moves one slot later: quantized notes always last at least one
# half-beat.
blip = NoteSequence.build([Note(1.31, 72, 1.33)], TimeUnit.SECONDS)
q = quantize(blip, grid)
print(f"2-centisecond blip became slots {q.notes[0].onset}..{q.notes[0].offset}")

# The grid also converts back. Indices past its end extrapolate at the
# final half-beat spacing, so offsets never get trapped at the edge.
restored = halfbeats_to_seconds(on_grid, grid)
print("back to seconds:", [round(n.onset, 3) for n in restored])
