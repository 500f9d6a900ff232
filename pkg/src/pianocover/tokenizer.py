"""Token codec between quantized note segments and the 232-word vocabulary.

A piece is cut into 4-beat (8 half-beat) segments and each segment
becomes one decoder target. Within a segment, a time cursor starts at 0
and the stream reads: an optional beat shift to the next occupied
half-beat, the pitches ending there followed by a note-off marker, the
pitches starting there followed by a note-on marker, and so on until
EOS. Notes that cross a segment boundary carry over: their note-off
simply arrives in a later segment, and the decoder keeps them open in
between. There is no tie symbol.

Id layout: PAD 0, EOS 1, BeatShift(k) 1+k for k in 1..100, NoteOff 102,
NoteOn 103, Pitch(p) 104+p for p in 0..127. Size 232.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

from .errors import ParameterError, ValidationError
from .midi import (
    PIANO_PITCH_MAX,
    PIANO_PITCH_MIN,
    Note,
    NoteSequence,
    TimeUnit,
)

log = logging.getLogger(__name__)

PAD = 0
EOS = 1
NOTE_OFF = 102
NOTE_ON = 103
VOCAB_SIZE = 232

SEGMENT_HALFBEATS = 8
MAX_TOKENS = 512

_SHIFT_MIN_ID = 2
_SHIFT_MAX_ID = 101
_PITCH_BASE = 104
_MAX_SHIFT = 100


def beat_shift_id(k: int) -> int:
    if not 1 <= k <= _MAX_SHIFT:
        raise ValidationError(f"beat shift {k} outside [1, {_MAX_SHIFT}]")
    return 1 + k


def pitch_id(pitch: int) -> int:
    if not 0 <= pitch <= 127:
        raise ValidationError(f"pitch {pitch} outside [0, 127]")
    return _PITCH_BASE + pitch


def symbol(token_id: int) -> tuple:
    """Human-readable symbol for an id: ("pad",), ("eos",), ("shift", k),
    ("off",), ("on",) or ("pitch", p)."""
    if token_id == PAD:
        return ("pad",)
    if token_id == EOS:
        return ("eos",)
    if _SHIFT_MIN_ID <= token_id <= _SHIFT_MAX_ID:
        return ("shift", token_id - 1)
    if token_id == NOTE_OFF:
        return ("off",)
    if token_id == NOTE_ON:
        return ("on",)
    if _PITCH_BASE <= token_id < VOCAB_SIZE:
        return ("pitch", token_id - _PITCH_BASE)
    raise ValidationError(f"id {token_id} outside the vocabulary")


def symbol_id(sym: tuple) -> int:
    kind = sym[0]
    if kind == "pad":
        return PAD
    if kind == "eos":
        return EOS
    if kind == "shift":
        return beat_shift_id(sym[1])
    if kind == "off":
        return NOTE_OFF
    if kind == "on":
        return NOTE_ON
    if kind == "pitch":
        return pitch_id(sym[1])
    raise ValidationError(f"unknown symbol {sym!r}")


@dataclass(frozen=True)
class TokenSeq:
    """One segment's token ids.

    Shape rules: ids lie in the vocabulary, at most one EOS occurs and
    only PAD may follow it, PAD never precedes EOS, and the beat shifts
    sum to at most 100.
    """

    ids: tuple
    segment_halfbeats: int = SEGMENT_HALFBEATS

    def __post_init__(self):
        ids = tuple(int(i) for i in self.ids)
        shift_total = 0
        seen_end = False
        for k, i in enumerate(ids):
            if not 0 <= i < VOCAB_SIZE:
                raise ValidationError(f"id {i} outside the vocabulary")
            if seen_end and i != PAD:
                raise ValidationError("only PAD may follow EOS or PAD")
            if i in (EOS, PAD):
                seen_end = True
            if _SHIFT_MIN_ID <= i <= _SHIFT_MAX_ID:
                shift_total += i - 1
        if shift_total > _MAX_SHIFT:
            raise ValidationError(
                f"beat shifts sum to {shift_total}, over the {_MAX_SHIFT} cap"
            )
        if self.segment_halfbeats < 1:
            raise ValidationError("segment_halfbeats must be at least 1")
        object.__setattr__(self, "ids", ids)

    def __len__(self):
        return len(self.ids)

    def __iter__(self):
        return iter(self.ids)


def encode_segment(notes: NoteSequence, segment_halfbeats: int = SEGMENT_HALFBEATS) -> TokenSeq:
    """Tokens for one segment-relative view of a quantized piece.

    Carried-in notes (negative onset) contribute only their note-off;
    offsets at or past the segment end are left to a later segment.
    """
    if notes.time_unit is not TimeUnit.HALF_BEATS:
        raise ParameterError("encode_segment expects half-beat times")
    if not 1 <= segment_halfbeats <= _MAX_SHIFT:
        raise ParameterError(
            f"segment_halfbeats {segment_halfbeats} outside [1, {_MAX_SHIFT}]"
        )
    ons = {}
    offs = {}
    for n in notes:
        if not PIANO_PITCH_MIN <= n.pitch <= PIANO_PITCH_MAX:
            raise ValidationError(
                f"pitch {n.pitch} outside the piano range "
                f"[{PIANO_PITCH_MIN}, {PIANO_PITCH_MAX}]"
            )
        onset, offset = int(n.onset), int(n.offset)
        if onset != n.onset or offset != n.offset:
            raise ValidationError(f"non-integer half-beat times ({n.onset}, {n.offset})")
        if onset >= segment_halfbeats:
            raise ValidationError(f"onset {onset} beyond the segment end")
        if offset < 0:
            raise ValidationError(f"offset {offset} before the segment start")
        if onset >= 0:
            ons.setdefault(onset, []).append(n.pitch)
        if offset < segment_halfbeats:
            offs.setdefault(offset, []).append(n.pitch)
    ids = []
    cursor = 0
    for t in sorted(set(ons) | set(offs)):
        if t > cursor:
            ids.append(beat_shift_id(t - cursor))
            cursor = t
        if t in offs:
            ids.extend(pitch_id(p) for p in sorted(offs[t]))
            ids.append(NOTE_OFF)
        if t in ons:
            ids.extend(pitch_id(p) for p in sorted(ons[t]))
            ids.append(NOTE_ON)
    ids.append(EOS)
    if len(ids) > MAX_TOKENS:
        raise ValidationError(
            f"segment encodes to {len(ids)} tokens, over the {MAX_TOKENS} cap"
        )
    return TokenSeq(tuple(ids), segment_halfbeats)


def decode_segment(tokens, open_notes=None):
    """Notes encoded by one segment, tolerating arbitrary id streams.

    ``tokens`` may be a TokenSeq or any iterable of ids. ``open_notes``
    maps still-sounding pitches to their (possibly negative) onset in
    this segment's time; note-offs close them. Returns the closed notes
    and the updated open-note mapping. Anomalies (note-off with nothing
    open, pitches never flushed, zero-length closes) are dropped with a
    warning.
    """
    ids = tokens.ids if isinstance(tokens, TokenSeq) else tuple(int(i) for i in tokens)
    open_map = dict(open_notes) if open_notes else {}
    closed = []
    pending = []
    dropped = 0
    cursor = 0
    for i in ids:
        if i == EOS:
            break
        if i == PAD:
            dropped += 1
        elif _SHIFT_MIN_ID <= i <= _SHIFT_MAX_ID:
            cursor += i - 1
        elif i in (NOTE_OFF, NOTE_ON):
            for p in pending:
                if p in open_map:
                    onset = open_map.pop(p)
                    if cursor > onset:
                        closed.append(Note(onset, p, cursor))
                    else:
                        dropped += 1
                elif i == NOTE_OFF:
                    dropped += 1
                if i == NOTE_ON:
                    open_map[p] = cursor
            pending = []
        else:
            pending.append(i - _PITCH_BASE)
    dropped += len(pending)
    if dropped:
        log.warning("decode_segment dropped %d anomalous events", dropped)
    seq = NoteSequence.build(closed, TimeUnit.HALF_BEATS, validate=False)
    return seq, open_map


def stitch(segments, segment_halfbeats: int = SEGMENT_HALFBEATS) -> NoteSequence:
    """Concatenate decoded segments into one piece in absolute half-beats.

    Notes left open by one segment stay open into the next; anything
    still sounding after the final segment closes at the piece end.
    """
    open_abs = {}
    notes = []
    for k, seg in enumerate(segments):
        base = k * segment_halfbeats
        open_rel = {p: a - base for p, a in open_abs.items()}
        decoded, open_rel = decode_segment(seg, open_rel)
        notes.extend(
            Note(n.onset + base, n.pitch, n.offset + base, n.velocity)
            for n in decoded
        )
        open_abs = {p: r + base for p, r in open_rel.items()}
    total = len(segments) * segment_halfbeats
    tail_dropped = 0
    for p, a in open_abs.items():
        if total > a:
            notes.append(Note(a, p, total))
        else:
            tail_dropped += 1
    if tail_dropped:
        log.warning("stitch dropped %d notes opened past the piece end", tail_dropped)
    last = max((n.offset for n in notes), default=0)
    return NoteSequence.build(
        notes, TimeUnit.HALF_BEATS, duration=max(total, last)
    )


def split_piece(seq: NoteSequence, segment_halfbeats: int = SEGMENT_HALFBEATS):
    """Segment-relative views of a quantized piece, ready to encode.

    A note appears in every segment it touches: with a negative onset
    where it carried in, and with an offset past the end where it
    carries out. A note ending exactly at a segment boundary appears in
    the next segment so its note-off lands at relative time 0.
    """
    if seq.time_unit is not TimeUnit.HALF_BEATS:
        raise ParameterError("split_piece expects half-beat times")
    last = max((n.offset for n in seq), default=0)
    total = max(seq.duration, last)
    n_segments = max(1, int(math.ceil(total / segment_halfbeats)))
    views = []
    for k in range(n_segments):
        base = k * segment_halfbeats
        kept = [
            Note(n.onset - base, n.pitch, n.offset - base, n.velocity)
            for n in seq
            if n.onset < base + segment_halfbeats and n.offset >= base
        ]
        views.append(
            NoteSequence.build(kept, TimeUnit.HALF_BEATS, validate=False)
        )
    return views


def encode_piece(seq: NoteSequence, segment_halfbeats: int = SEGMENT_HALFBEATS):
    """Encode a whole quantized piece as one TokenSeq per segment."""
    return [
        encode_segment(view, segment_halfbeats)
        for view in split_piece(seq, segment_halfbeats)
    ]


def read_token_file(path, segment_halfbeats: int = SEGMENT_HALFBEATS):
    """Token segments from a text file, one line of space-separated ids
    per segment."""
    segments = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                ids = tuple(int(tok) for tok in line.split())
            except ValueError:
                raise ValidationError(
                    f"{path}:{lineno}: token ids must be integers"
                ) from None
            segments.append(TokenSeq(ids, segment_halfbeats))
    return segments


def write_token_file(path, segments):
    with open(path, "w") as fh:
        for seg in segments:
            fh.write(" ".join(str(i) for i in seg.ids) + "\n")
