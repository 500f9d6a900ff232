"""pianocover: turn pop audio into beat-quantized piano cover MIDI.

Subsystems: an SMF codec (:mod:`pianocover.midi`), beat grids and half-beat
quantization (:mod:`pianocover.beats`), chroma-DTW alignment
(:mod:`pianocover.sync`), melody-chroma data filters
(:mod:`pianocover.filtering`), the log-mel frontend
(:mod:`pianocover.features`), the 232-symbol token codec
(:mod:`pianocover.tokenizer`), an arranger-conditioned encoder-decoder
transformer (:mod:`pianocover.model`), and dataset/inference orchestration
plus the CLI (:mod:`pianocover.pipeline`, :mod:`pianocover.cli`).
"""

__version__ = "0.1.0"
