"""Beat grids, half-beat quantization, and a DP beat tracker.

The half-beat (8th note) grid is derived from detected quarter-note beats:
even positions are the beats themselves, odd positions the midpoints of
adjacent beats, plus one trailing midpoint extrapolated from the last
inter-beat interval.  Quantization snaps note times to the nearest half-beat
index (ties round down) and applies the collision rule: an offset landing on
its own onset moves to the next half-beat.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import features
from .errors import NoBeatsError, ParameterError, ValidationError
from .midi import Note, NoteSequence, TimeUnit

log = logging.getLogger(__name__)

HALF_BEATS_PER_BEAT = 2

# Beat tracker knobs.  The onset frontend runs the same STFT/mel machinery
# as the model input but at a sharper window so click-level timing survives;
# the higher log floor keeps near-silence wiggle out of the flux.
TEMPO_MIN_BPM = 60.0
TEMPO_MAX_BPM = 180.0
MIN_TRACK_SECONDS = 5.0
_TIGHTNESS = 100.0
_ONSET_WINDOW = 1024
_ONSET_HOP = 256
_ONSET_MELS = 64
_ONSET_FLOOR = 1e-2


@dataclass(frozen=True)
class BeatGrid:
    """Strictly increasing quarter-note beat times plus the derived
    half-beat grid (length exactly 2 * len(beats))."""

    beats: np.ndarray
    half_beats: np.ndarray = field(default=None)

    def __post_init__(self):
        beats = np.asarray(self.beats, dtype=np.float64)
        if beats.ndim != 1 or len(beats) < 2:
            raise ValidationError("a beat grid needs at least 2 beats")
        if not np.all(np.diff(beats) > 0):
            raise ValidationError("beat times must be strictly increasing")
        half = np.empty(2 * len(beats))
        half[0::2] = beats
        half[1:-1:2] = 0.5 * (beats[:-1] + beats[1:])
        half[-1] = beats[-1] + 0.5 * (beats[-1] - beats[-2])
        object.__setattr__(self, "beats", beats)
        object.__setattr__(self, "half_beats", half)

    def __len__(self):
        return len(self.beats)

    def halfbeat_to_seconds(self, index):
        """Seconds at half-beat ``index``; indices past the end extrapolate
        at the final inter-half-beat interval."""
        hb = self.half_beats
        index = np.asarray(index)
        last = len(hb) - 1
        step = hb[-1] - hb[-2]
        inside = np.clip(index, 0, last)
        out = hb[inside] + np.maximum(index - last, 0) * step
        return out if out.ndim else float(out)

    def nearest_halfbeat(self, times):
        """Nearest half-beat index for each time; exact midpoints round to
        the earlier index.  Returns (indices, clamped_count)."""
        hb = self.half_beats
        t = np.atleast_1d(np.asarray(times, dtype=np.float64))
        right = np.searchsorted(hb, t)
        left = np.clip(right - 1, 0, len(hb) - 1)
        right = np.clip(right, 0, len(hb) - 1)
        pick_right = np.abs(hb[right] - t) < np.abs(t - hb[left])
        idx = np.where(pick_right, right, left)
        clamped = int(np.sum((t < hb[0]) | (t > hb[-1])))
        return idx, clamped


def read_beat_file(path) -> BeatGrid:
    """Parse the external beat format: one decimal beat time per line."""
    times = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                times.append(float(line))
            except ValueError:
                raise ValidationError(f"{path}:{lineno}: not a beat time: {line!r}")
    return BeatGrid(np.array(times))


def write_beat_file(path, grid: BeatGrid):
    with open(path, "w") as fh:
        for t in grid.beats:
            fh.write(f"{t:.9f}\n")


# ---------------------------------------------------------------------------
# Quantization


def quantize(seq: NoteSequence, grid: BeatGrid) -> NoteSequence:
    """Snap every onset/offset to the nearest half-beat index.

    If onset and offset quantize to the same index the offset moves one
    half-beat later, so quantized notes always satisfy offset >= onset + 1.
    Times outside the grid clamp to the first/last half-beat (a warning
    reports the clamp count).  Exact duplicates created by quantization are
    merged.
    """
    if seq.time_unit is not TimeUnit.SECONDS:
        raise ParameterError("quantize expects a sequence in seconds")
    if not seq.notes:
        return NoteSequence.build([], TimeUnit.HALF_BEATS, 0)
    onsets = np.array([n.onset for n in seq.notes])
    offsets = np.array([n.offset for n in seq.notes])
    on_idx, c1 = grid.nearest_halfbeat(onsets)
    off_idx, c2 = grid.nearest_halfbeat(offsets)
    if c1 + c2:
        log.warning("%d note boundaries clamped to the beat grid", c1 + c2)
    off_idx = np.where(off_idx == on_idx, off_idx + 1, off_idx)
    notes = [
        Note(int(a), n.pitch, int(b), n.velocity)
        for n, a, b in zip(seq.notes, on_idx, off_idx)
    ]
    return NoteSequence.build(notes, TimeUnit.HALF_BEATS)


def halfbeats_to_seconds(seq: NoteSequence, grid: BeatGrid) -> NoteSequence:
    """Map half-beat indices back to absolute seconds through the grid."""
    if seq.time_unit is not TimeUnit.HALF_BEATS:
        raise ParameterError("halfbeats_to_seconds expects a half-beat sequence")
    beyond = sum(1 for n in seq.notes if n.offset >= len(grid.half_beats))
    if beyond:
        log.info("%d note(s) extend past the grid; extrapolating", beyond)
    notes = [
        Note(
            grid.halfbeat_to_seconds(n.onset),
            n.pitch,
            grid.halfbeat_to_seconds(n.offset),
            n.velocity,
        )
        for n in seq.notes
    ]
    duration = max(
        grid.halfbeat_to_seconds(seq.duration),
        max((n.offset for n in notes), default=0.0),
    )
    return NoteSequence.build(notes, TimeUnit.SECONDS, duration)


# ---------------------------------------------------------------------------
# Beat tracking


def onset_envelope(audio: np.ndarray, sample_rate: int):
    """Spectral-flux onset envelope from the log-mel frontend.

    Returns (envelope, frame times in seconds).  envelope[k] is the summed
    positive log-mel difference between frames k+1 and k, timestamped at the
    start of frame k+1's newly covered samples; the constant is calibrated
    on synthetic click tracks (residual bias under 10 ms).
    """
    mag = features.stft_mag(audio, _ONSET_WINDOW, _ONSET_HOP)
    if mag.shape[0] < 3:
        raise NoBeatsError("audio too short for an onset envelope")
    fb = features.mel_filterbank(sample_rate, _ONSET_WINDOW, _ONSET_MELS)
    logmel = np.log((mag ** 2) @ fb.T + _ONSET_FLOOR)
    env = np.maximum(np.diff(logmel, axis=0), 0.0).sum(axis=1)
    times = (np.arange(len(env)) * _ONSET_HOP + _ONSET_WINDOW) / sample_rate
    return env, times


def estimate_tempo_period(env: np.ndarray, frame_rate: float) -> float:
    """Global tempo via the autocorrelation peak in [60, 180] BPM.

    Candidate lags are weighted by a log-normal prior centered at 120 BPM
    (one octave standard deviation) so that subharmonics do not win ties.
    Returns the beat period in envelope frames (fractional, via parabolic
    interpolation around the integer-lag peak).
    """
    # Light smoothing keeps periods that fall between integer lags from
    # losing their autocorrelation peak to an aligned subharmonic.
    kernel = np.hanning(7)
    x = np.convolve(env, kernel / kernel.sum(), mode="same")
    x = x - x.mean()
    acf = np.correlate(x, x, mode="full")[len(x) - 1 :]
    lag_min = max(2, int(np.floor(frame_rate * 60.0 / TEMPO_MAX_BPM)))
    lag_max = int(np.ceil(frame_rate * 60.0 / TEMPO_MIN_BPM))
    if lag_max >= len(acf):
        raise NoBeatsError("audio too short to estimate a tempo")
    lags = np.arange(lag_min, lag_max + 1)
    bpm = 60.0 * frame_rate / lags
    prior = np.exp(-0.5 * np.log2(bpm / 120.0) ** 2)
    window = acf[lag_min : lag_max + 1] * prior
    k = lag_min + int(np.argmax(window))
    period = float(k)
    if 1 <= k < len(acf) - 1:
        a, b, c = acf[k - 1], acf[k], acf[k + 1]
        denom = a - 2 * b + c
        if denom < 0:
            period = k + 0.5 * (a - c) / denom
    return float(np.clip(period, lag_min, lag_max))


def _dp_beat_select(env: np.ndarray, period: float):
    """Ellis-style dynamic programming: maximize summed onset strength plus
    a log-spacing regularity penalty around the estimated period."""
    n = len(env)
    scale = env.std()
    strength = env / scale if scale > 0 else env
    score = strength.copy()
    backlink = np.full(n, -1, dtype=np.int64)
    lo = max(1, int(round(period / 2)))
    hi = int(round(period * 2))
    for i in range(lo, n):
        j0 = max(0, i - hi)
        j1 = i - lo + 1
        if j1 <= j0:
            continue
        prev = np.arange(j0, j1)
        penalty = _TIGHTNESS * np.log((i - prev) / period) ** 2
        cand = score[j0:j1] - penalty
        best = int(np.argmax(cand))
        score[i] = strength[i] + cand[best]
        backlink[i] = j0 + best
    tail = max(n - int(round(period)), 0)
    end = tail + int(np.argmax(score[tail:]))
    beats = [end]
    while backlink[beats[-1]] >= 0:
        beats.append(backlink[beats[-1]])
    return np.array(beats[::-1], dtype=np.int64)


def _refine_peaks(env: np.ndarray, idx: np.ndarray):
    """Sub-frame beat positions by parabolic interpolation of the envelope."""
    shifts = np.zeros(len(idx))
    for out, i in enumerate(idx):
        if 1 <= i < len(env) - 1:
            a, b, c = env[i - 1], env[i], env[i + 1]
            denom = a - 2 * b + c
            if denom < 0:
                shifts[out] = np.clip(0.5 * (a - c) / denom, -0.5, 0.5)
    return idx + shifts


def track_beats(audio: np.ndarray, sample_rate: int) -> BeatGrid:
    """Estimate beat times from mono audio.

    Pipeline: spectral-flux onset envelope from the log-mel frontend, global
    tempo by autocorrelation peak in [60, 180] BPM, then dynamic-programming
    beat selection trading onset strength against inter-beat regularity.
    Raises NoBeatsError for audio shorter than 5 s or with a silent
    envelope.
    """
    audio = np.asarray(audio, dtype=np.float64)
    if len(audio) < MIN_TRACK_SECONDS * sample_rate:
        raise NoBeatsError(
            f"need at least {MIN_TRACK_SECONDS:.0f} s of audio to track beats"
        )
    env, times = onset_envelope(audio, sample_rate)
    if env.max() <= 0.0:
        raise NoBeatsError("silent input: onset envelope is all zero")
    frame_rate = sample_rate / _ONSET_HOP
    period = estimate_tempo_period(env, frame_rate)
    idx = _dp_beat_select(env, period)
    if len(idx) < 2:
        raise NoBeatsError("fewer than 2 beats found")
    positions = _refine_peaks(env, idx)
    beat_times = np.interp(positions, np.arange(len(times)), times)
    return BeatGrid(beat_times)
