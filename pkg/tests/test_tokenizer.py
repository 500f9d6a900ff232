import numpy as np
import pytest

from pianocover.errors import ParameterError, ValidationError
from pianocover.midi import Note, NoteSequence, TimeUnit
from pianocover.tokenizer import (
    EOS,
    MAX_TOKENS,
    NOTE_OFF,
    NOTE_ON,
    PAD,
    SEGMENT_HALFBEATS,
    TokenSeq,
    VOCAB_SIZE,
    beat_shift_id,
    decode_segment,
    encode_piece,
    encode_segment,
    pitch_id,
    read_token_file,
    split_piece,
    stitch,
    symbol,
    symbol_id,
    write_token_file,
)

HB = TimeUnit.HALF_BEATS


def hb_seq(notes):
    return NoteSequence.build(notes, HB, validate=False)


def random_quantized_piece(rng, max_halfbeats=64):
    length = int(rng.integers(4, max_halfbeats + 1))
    notes = []
    busy_until = {}
    for t in range(length):
        if rng.random() < 0.6:
            size = int(rng.integers(1, 9))
            for p in rng.choice(np.arange(21, 109), size=size, replace=False):
                p = int(p)
                if busy_until.get(p, 0) > t:
                    continue
                dur = int(rng.integers(1, 13))
                notes.append(Note(t, p, t + dur))
                busy_until[p] = t + dur
    return NoteSequence.build(notes, HB)


class TestVocab:
    def test_size_law(self):
        assert VOCAB_SIZE == 232 == 128 + 2 + 100 + 2

    def test_bijection_over_all_ids(self):
        seen = set()
        for i in range(VOCAB_SIZE):
            sym = symbol(i)
            assert symbol_id(sym) == i
            seen.add(sym)
        assert len(seen) == VOCAB_SIZE

    def test_anchor_ids(self):
        assert PAD == 0 and EOS == 1
        assert beat_shift_id(1) == 2
        assert beat_shift_id(100) == 101
        assert NOTE_OFF == 102 and NOTE_ON == 103
        assert pitch_id(0) == 104
        assert pitch_id(127) == 231

    def test_out_of_range(self):
        with pytest.raises(ValidationError):
            beat_shift_id(0)
        with pytest.raises(ValidationError):
            beat_shift_id(101)
        with pytest.raises(ValidationError):
            pitch_id(128)
        with pytest.raises(ValidationError):
            symbol(232)


class TestTokenSeq:
    def test_accepts_padded_row(self):
        TokenSeq((pitch_id(60), NOTE_ON, EOS, PAD, PAD))

    def test_rejects_tokens_after_eos(self):
        with pytest.raises(ValidationError):
            TokenSeq((EOS, NOTE_ON))

    def test_rejects_pad_before_eos(self):
        with pytest.raises(ValidationError):
            TokenSeq((PAD, EOS))

    def test_rejects_out_of_vocab(self):
        with pytest.raises(ValidationError):
            TokenSeq((232,))

    def test_rejects_shift_overflow(self):
        with pytest.raises(ValidationError):
            TokenSeq((beat_shift_id(100), beat_shift_id(1), EOS))


class TestEncode:
    def test_empty_segment(self):
        assert encode_segment(hb_seq([])).ids == (EOS,)

    def test_single_note(self):
        seq = hb_seq([Note(0, 60, 2)])
        assert encode_segment(seq).ids == (
            pitch_id(60),
            NOTE_ON,
            beat_shift_id(2),
            pitch_id(60),
            NOTE_OFF,
            EOS,
        )

    def test_chord(self):
        seq = hb_seq([Note(1, p, 3) for p in (67, 60, 64)])
        assert encode_segment(seq).ids == (
            beat_shift_id(1),
            pitch_id(60),
            pitch_id(64),
            pitch_id(67),
            NOTE_ON,
            beat_shift_id(2),
            pitch_id(60),
            pitch_id(64),
            pitch_id(67),
            NOTE_OFF,
            EOS,
        )

    def test_carried_in_note_emits_only_off(self):
        seq = hb_seq([Note(-2, 70, 3)])
        assert encode_segment(seq).ids == (
            beat_shift_id(3),
            pitch_id(70),
            NOTE_OFF,
            EOS,
        )

    def test_carried_out_note_emits_only_on(self):
        seq = hb_seq([Note(2, 70, 8)])
        assert encode_segment(seq).ids == (
            beat_shift_id(2),
            pitch_id(70),
            NOTE_ON,
            EOS,
        )

    def test_off_at_segment_start(self):
        seq = hb_seq([Note(-4, 70, 0)])
        assert encode_segment(seq).ids == (pitch_id(70), NOTE_OFF, EOS)

    def test_off_group_precedes_on_group(self):
        seq = hb_seq([Note(0, 60, 2), Note(2, 60, 4)])
        assert encode_segment(seq).ids == (
            pitch_id(60),
            NOTE_ON,
            beat_shift_id(2),
            pitch_id(60),
            NOTE_OFF,
            pitch_id(60),
            NOTE_ON,
            beat_shift_id(2),
            pitch_id(60),
            NOTE_OFF,
            EOS,
        )

    def test_validation(self):
        with pytest.raises(ValidationError):
            encode_segment(hb_seq([Note(0, 20, 2)]))
        with pytest.raises(ValidationError):
            encode_segment(hb_seq([Note(0, 109, 2)]))
        with pytest.raises(ValidationError):
            encode_segment(hb_seq([Note(8, 60, 9)]))
        with pytest.raises(ValidationError):
            encode_segment(hb_seq([Note(-3, 60, -1)]))
        with pytest.raises(ValidationError):
            encode_segment(hb_seq([Note(0.5, 60, 2)]))
        with pytest.raises(ParameterError):
            encode_segment(NoteSequence.build([Note(0, 60, 2)]))

    def test_token_budget_enforced(self):
        notes = [
            Note(t, p, t + 1)
            for t in range(SEGMENT_HALFBEATS)
            for p in range(21, 109)
        ]
        with pytest.raises(ValidationError):
            encode_segment(hb_seq(notes))
        assert MAX_TOKENS == 512

    def test_shift_shape_properties(self):
        rng = np.random.default_rng(13)
        for _ in range(200):
            piece = random_quantized_piece(rng, 8)
            tokens = encode_segment(split_piece(piece)[0]).ids
            shifts = [k for k, i in enumerate(tokens) if 2 <= i <= 101]
            assert all(symbol(tokens[k])[1] >= 1 for k in shifts)
            for a, b in zip(shifts, shifts[1:]):
                assert b != a + 1, "two consecutive beat shifts"
            assert len(shifts) <= SEGMENT_HALFBEATS + 2


class TestDecode:
    def test_empty(self):
        seq, open_map = decode_segment(TokenSeq((EOS,)))
        assert len(seq) == 0
        assert open_map == {}

    def test_open_note(self):
        seq, open_map = decode_segment(TokenSeq((pitch_id(60), NOTE_ON, EOS)))
        assert len(seq) == 0
        assert open_map == {60: 0}

    def test_unmatched_off_dropped(self):
        seq, open_map = decode_segment(
            TokenSeq((pitch_id(60), NOTE_OFF, EOS))
        )
        assert len(seq) == 0 and open_map == {}

    def test_retrigger_closes_previous(self):
        ids = (
            pitch_id(60),
            NOTE_ON,
            beat_shift_id(2),
            pitch_id(60),
            NOTE_ON,
            beat_shift_id(2),
            pitch_id(60),
            NOTE_OFF,
            EOS,
        )
        seq, open_map = decode_segment(TokenSeq(ids))
        assert [(n.onset, n.offset) for n in seq] == [(0, 2), (2, 4)]
        assert open_map == {}

    def test_pending_pitches_dropped_at_eos(self):
        seq, open_map = decode_segment(TokenSeq((pitch_id(60), EOS)))
        assert len(seq) == 0 and open_map == {}

    def test_carried_state_closes(self):
        seq, open_map = decode_segment(
            TokenSeq((beat_shift_id(2), pitch_id(60), NOTE_OFF, EOS)),
            open_notes={60: -6},
        )
        assert [(n.onset, n.pitch, n.offset) for n in seq] == [(-6, 60, 2)]
        assert open_map == {}

    def test_round_trip_single_segment(self):
        rng = np.random.default_rng(29)
        for _ in range(200):
            piece = random_quantized_piece(rng, 8)
            view = split_piece(piece)[0]
            decoded, open_map = decode_segment(encode_segment(view))
            inside = [n for n in view if n.offset < SEGMENT_HALFBEATS and n.onset >= 0]
            crossing = {n.pitch for n in view if n.offset >= SEGMENT_HALFBEATS}
            assert list(decoded) == sorted(inside)
            assert set(open_map) == crossing

    def test_raw_id_stream_fuzz(self):
        rng = np.random.default_rng(41)
        for _ in range(300):
            ids = rng.integers(0, VOCAB_SIZE, size=rng.integers(1, 80))
            seq, open_map = decode_segment(ids.tolist())
            for n in seq:
                assert n.offset > n.onset
            assert all(0 <= p <= 127 for p in open_map)


class TestStitch:
    def test_boundary_crossing_note(self):
        seg0 = TokenSeq((beat_shift_id(6), pitch_id(72), NOTE_ON, EOS))
        seg1 = TokenSeq((beat_shift_id(2), pitch_id(72), NOTE_OFF, EOS))
        out = stitch([seg0, seg1])
        assert [(n.onset, n.pitch, n.offset) for n in out] == [(6, 72, 10)]
        assert out.duration == 16

    def test_all_empty(self):
        out = stitch([TokenSeq((EOS,))] * 3)
        assert len(out) == 0
        assert out.duration == 24

    def test_never_closed_note_ends_at_piece_end(self):
        seg0 = TokenSeq((pitch_id(60), NOTE_ON, EOS))
        out = stitch([seg0, TokenSeq((EOS,))])
        assert [(n.onset, n.offset) for n in out] == [(0, 16)]


class TestFullRoundTrip:
    def test_random_pieces(self):
        rng = np.random.default_rng(2025)
        for _ in range(1000):
            piece = random_quantized_piece(rng)
            segments = encode_piece(piece)
            back = stitch(segments)
            assert back.notes == piece.notes

    def test_example_piece_with_long_notes(self):
        piece = NoteSequence.build(
            [Note(0, 21, 25), Note(6, 108, 10), Note(7, 60, 8), Note(23, 60, 24)],
            HB,
        )
        back = stitch(encode_piece(piece))
        assert back.notes == piece.notes

    def test_note_ending_at_piece_end(self):
        piece = NoteSequence.build([Note(0, 60, 16)], HB)
        back = stitch(encode_piece(piece))
        assert back.notes == piece.notes


class TestTokenFile:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(6)
        segments = encode_piece(random_quantized_piece(rng))
        p = tmp_path / "tokens.txt"
        write_token_file(p, segments)
        back = read_token_file(p)
        assert [s.ids for s in back] == [s.ids for s in segments]

    def test_rejects_garbage(self, tmp_path):
        p = tmp_path / "tokens.txt"
        p.write_text("1 2 x\n")
        with pytest.raises(ValidationError):
            read_token_file(p)

    def test_empty_file(self, tmp_path):
        p = tmp_path / "tokens.txt"
        p.write_text("")
        assert read_token_file(p) == []
