"""Tests for the numpy transformer: buckets, shapes, causality, gradients."""

import math
from types import SimpleNamespace

import numpy as np
import pytest

from conftest import gradient_check, random_model_batch
from pianocover.errors import (
    DivergenceError,
    FormatError,
    ParameterError,
    ValidationError,
)
from pianocover.model import (
    ModelConfig,
    OptimizerKind,
    TrainConfig,
    compute_loss,
    count_params,
    decode_step,
    desk_config,
    encode,
    greedy_generate,
    init_params,
    load_checkpoint,
    loss_and_grads,
    make_optimizer,
    param_shapes,
    paper_scale_config,
    relative_position_bucket,
    save_checkpoint,
    train,
)
from pianocover.model import network
from pianocover.tokenizer import EOS, PAD, symbol


def tiny_config(**overrides):
    base = dict(
        d_model=24,
        num_heads=4,
        d_ff=32,
        num_encoder_layers=1,
        num_decoder_layers=1,
        n_mels=12,
        num_arrangers=3,
        relative_bias_buckets=8,
        relative_bias_max_distance=20,
        max_decode_len=16,
    )
    base.update(overrides)
    return desk_config(**base)


def bucket_ref(rel, bidirectional, num_buckets, max_distance):
    # Scalar reference: exact buckets below half the range, log-spaced above.
    bucket = 0
    if bidirectional:
        num_buckets //= 2
        if rel > 0:
            bucket += num_buckets
        rel = abs(rel)
    else:
        rel = -min(rel, 0)
    max_exact = num_buckets // 2
    if rel < max_exact:
        return bucket + rel
    large = max_exact + int(
        math.log(rel / max_exact)
        / math.log(max_distance / max_exact)
        * (num_buckets - max_exact)
    )
    return bucket + min(large, num_buckets - 1)


class TestBuckets:
    @pytest.mark.parametrize("bidirectional", [True, False])
    @pytest.mark.parametrize("num_buckets,max_distance", [(32, 128), (8, 20)])
    def test_matches_scalar_reference(self, bidirectional, num_buckets, max_distance):
        rels = np.arange(-300, 301)
        got = relative_position_bucket(rels, bidirectional, num_buckets, max_distance)
        want = [bucket_ref(int(r), bidirectional, num_buckets, max_distance) for r in rels]
        assert got.tolist() == want

    def test_output_range(self):
        rels = np.arange(-1000, 1001)
        for bidirectional in (True, False):
            got = relative_position_bucket(rels, bidirectional, 32, 128)
            assert got.min() >= 0 and got.max() < 32

    def test_translation_invariance(self):
        # Prepending positions shifts queries and memory together, so
        # buckets between the original pairs are unchanged.
        def matrix(n):
            rel = np.arange(n)[None, :] - np.arange(n)[:, None]
            return relative_position_bucket(rel, False, 32, 128)

        small = matrix(6)
        big = matrix(10)
        assert np.array_equal(big[4:, 4:], small)


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValidationError):
            desk_config(d_model=30, num_heads=4)
        with pytest.raises(ValidationError):
            desk_config(vocab_size=100)
        with pytest.raises(ValidationError):
            desk_config(d_ff=0)

    def test_count_params_closed_form(self):
        cfg = desk_config(
            d_model=8,
            num_heads=2,
            d_ff=16,
            num_encoder_layers=1,
            num_decoder_layers=1,
            n_mels=16,
            num_arrangers=4,
        )
        # 16*8 proj + 4*8 arranger + 232*8 tokens + 2*32*2 bias tables
        # + encoder (8 + 4*64 + 8 + 128 + 128) + 8 + decoder (3*8 + 8*64 + 256) + 8
        want = 128 + 32 + 1856 + 128 + 528 + 8 + 792 + 8
        assert count_params(cfg) == want

    def test_count_matches_enumeration(self):
        for cfg in (tiny_config(), desk_config(), tiny_config(num_encoder_layers=3, num_decoder_layers=2)):
            enumerated = sum(
                int(np.prod(shape)) for shape in param_shapes(cfg).values()
            )
            assert count_params(cfg) == enumerated

    def test_arranger_table_arithmetic(self):
        base = tiny_config(num_arrangers=4)
        grown = tiny_config(num_arrangers=9)
        assert count_params(grown) - count_params(base) == 5 * base.d_model

    def test_paper_scale_window(self):
        n = count_params(paper_scale_config())
        assert 50_000_000 <= n <= 70_000_000


class TestInitParams:
    def test_shapes_and_order(self):
        cfg = tiny_config()
        params = init_params(cfg, seed=0)
        shapes = param_shapes(cfg)
        assert list(params) == list(shapes)
        for name, value in params.items():
            assert value.shape == shapes[name]
            assert np.all(np.isfinite(value))

    def test_norms_and_biases(self):
        params = init_params(tiny_config(), seed=1)
        assert np.all(params["enc0_ln1"] == 1.0)
        assert np.all(params["dec_ln_final"] == 1.0)
        assert np.all(params["enc_rel_bias"] == 0.0)
        assert np.all(params["dec_rel_bias"] == 0.0)

    def test_dtype(self):
        cfg = tiny_config()
        assert init_params(cfg)["enc0_q"].dtype == np.float64
        assert init_params(cfg, dtype=np.float32)["enc0_q"].dtype == np.float32


class TestEncode:
    def test_state_length(self):
        cfg = tiny_config()
        params = init_params(cfg, seed=0)
        rng = np.random.default_rng(0)
        for n_frames in (1, 5, 11):
            state = encode(rng.normal(size=(n_frames, cfg.n_mels)), 0, params, cfg)
            assert state.shape == (1 + n_frames, cfg.d_model)

    def test_deterministic(self):
        cfg = tiny_config()
        params = init_params(cfg, seed=0)
        frames = np.random.default_rng(1).normal(size=(4, cfg.n_mels))
        a = encode(frames, 1, params, cfg)
        b = encode(frames.copy(), 1, params, cfg)
        assert np.array_equal(a, b)

    def test_accepts_spectrogram_object(self):
        cfg = tiny_config()
        params = init_params(cfg, seed=0)
        frames = np.random.default_rng(2).normal(size=(4, cfg.n_mels))
        wrapped = SimpleNamespace(frames=frames)
        assert np.array_equal(encode(wrapped, 0, params, cfg), encode(frames, 0, params, cfg))

    def test_arranger_changes_output(self):
        cfg = tiny_config()
        params = init_params(cfg, seed=0)
        frames = np.random.default_rng(3).normal(size=(4, cfg.n_mels))
        assert not np.array_equal(
            encode(frames, 0, params, cfg), encode(frames, 1, params, cfg)
        )

    def test_zeroed_branches_localize_arranger(self):
        # With attention and FFN residual branches zeroed out, rows never
        # mix, so only the arranger row can differ between arranger ids.
        cfg = tiny_config(num_encoder_layers=2)
        params = init_params(cfg, seed=0)
        for i in range(cfg.num_encoder_layers):
            params[f"enc{i}_o"][:] = 0.0
            params[f"enc{i}_ff2"][:] = 0.0
        frames = np.random.default_rng(4).normal(size=(5, cfg.n_mels))
        a = encode(frames, 0, params, cfg)
        b = encode(frames, 2, params, cfg)
        assert np.array_equal(a[1:], b[1:])
        assert not np.array_equal(a[0], b[0])

    def test_bad_arguments(self):
        cfg = tiny_config()
        params = init_params(cfg, seed=0)
        frames = np.zeros((4, cfg.n_mels))
        with pytest.raises(ParameterError):
            encode(frames, cfg.num_arrangers, params, cfg)
        with pytest.raises(ParameterError):
            encode(frames, -1, params, cfg)
        with pytest.raises(ParameterError):
            encode(np.zeros((4, cfg.n_mels + 1)), 0, params, cfg)


class TestDecodeStep:
    def _setup(self, seed=0):
        cfg = tiny_config()
        params = init_params(cfg, seed=seed)
        rng = np.random.default_rng(seed)
        state = encode(rng.normal(size=(4, cfg.n_mels)), 0, params, cfg)
        return cfg, params, state, rng

    def test_logits_shape_and_softmax(self):
        cfg, params, state, _ = self._setup()
        logits = decode_step(state, [5, 104, 103], params, cfg)
        assert logits.shape == (cfg.vocab_size,)
        probs = np.exp(logits - logits.max())
        probs /= probs.sum()
        assert abs(float(probs.sum()) - 1.0) < 1e-6
        assert np.all(probs >= 0.0)

    def test_prefix_length_guard(self):
        cfg, params, state, _ = self._setup()
        with pytest.raises(ParameterError):
            decode_step(state, [5] * cfg.max_decode_len, params, cfg)

    def test_matches_full_forward(self):
        cfg, params, state, rng = self._setup(1)
        prefix = [int(t) for t in rng.integers(2, cfg.vocab_size, size=7)]
        logits, _ = network.decoder_forward([PAD] + prefix, state, params, cfg)
        assert np.array_equal(decode_step(state, prefix, params, cfg), logits[-1])

    def test_causality_exact(self):
        # Perturbing position j leaves every logit row before j bit-identical.
        cfg, params, state, rng = self._setup(2)
        ids = [int(t) for t in rng.integers(2, cfg.vocab_size, size=12)]
        base, _ = network.decoder_forward([PAD] + ids, state, params, cfg)
        for j in (0, 4, 11):
            mutated = list(ids)
            mutated[j] = (mutated[j] + 57) % 230 + 2
            assert mutated[j] != ids[j]
            got, _ = network.decoder_forward([PAD] + mutated, state, params, cfg)
            assert np.array_equal(got[: j + 1], base[: j + 1])
            assert not np.array_equal(got, base)


class TestGreedy:
    def test_zero_head_ties_break_low(self):
        cfg = tiny_config()
        params = init_params(cfg, seed=0)
        params["token_emb"][:] = 0.0
        rng = np.random.default_rng(0)
        state = encode(rng.normal(size=(3, cfg.n_mels)), 0, params, cfg)
        logits = decode_step(state, [], params, cfg)
        assert np.all(logits == logits[0])
        assert int(np.argmax(logits)) == PAD

    def test_duplicate_rows_tie_break(self):
        cfg = tiny_config()
        params = init_params(cfg, seed=3)
        params["token_emb"][150] = params["token_emb"][40]
        rng = np.random.default_rng(3)
        state = encode(rng.normal(size=(3, cfg.n_mels)), 1, params, cfg)
        logits = decode_step(state, [5], params, cfg)
        assert logits[40] == logits[150]
        ranked = np.argsort(logits)
        if ranked[-1] in (40, 150):
            assert int(np.argmax(logits)) == 40

    def test_output_pitches_within_piano_range(self):
        cfg = tiny_config(max_decode_len=24)
        for seed in range(3):
            params = init_params(cfg, seed=seed)
            frames = np.random.default_rng(seed).normal(size=(3, cfg.n_mels))
            seq = greedy_generate(frames, 0, params, cfg)
            for token in seq.ids:
                sym = symbol(token)
                if sym[0] == "pitch":
                    assert 21 <= sym[1] <= 108

    def test_deterministic_and_excludes_pad(self):
        cfg = tiny_config()
        params = init_params(cfg, seed=4)
        rng = np.random.default_rng(4)
        frames = rng.normal(size=(3, cfg.n_mels))
        a = greedy_generate(frames, 0, params, cfg)
        b = greedy_generate(frames, 0, params, cfg)
        assert a.ids == b.ids
        assert PAD not in a.ids
        assert len(a.ids) <= cfg.max_decode_len


class TestLoss:
    def test_init_loss_near_uniform(self):
        cfg = tiny_config()
        for seed in (0, 1, 2):
            params = init_params(cfg, seed=seed)
            rng = np.random.default_rng(seed + 10)
            batch = []
            for i in range(3):
                frames = rng.normal(size=(3, cfg.n_mels))
                ids = tuple(int(t) for t in rng.integers(0, cfg.vocab_size, size=10))
                batch.append((frames, i % cfg.num_arrangers, ids))
            loss = compute_loss(batch, params, cfg)
            assert abs(loss - math.log(232)) < 0.2

    def test_pad_targets_never_change_loss(self):
        cfg = tiny_config()
        params = init_params(cfg, seed=5)
        rng = np.random.default_rng(5)
        frames = rng.normal(size=(4, cfg.n_mels))
        ids = (3, 104, 103, 9, 104, 102, EOS)
        base = compute_loss([(frames, 0, ids)], params, cfg)
        padded = compute_loss([(frames, 0, ids + (PAD, PAD, PAD))], params, cfg)
        assert padded == base

    def test_errors(self):
        cfg = tiny_config()
        params = init_params(cfg, seed=0)
        with pytest.raises(ParameterError):
            compute_loss([], params, cfg)
        frames = np.zeros((2, cfg.n_mels))
        with pytest.raises(ParameterError):
            compute_loss([(frames, 0, (PAD, PAD))], params, cfg)
        too_long = tuple([5] * (cfg.max_decode_len + 1))
        with pytest.raises(ParameterError):
            compute_loss([(frames, 0, too_long)], params, cfg)


class TestGradients:
    @pytest.mark.parametrize("seed", [0, 1])
    def test_finite_differences(self, seed):
        worst = gradient_check(tiny_config(), seed=seed, entries_per_tensor=8)
        bad = {k: v for k, v in worst.items() if v > 1e-3}
        assert not bad, f"gradient mismatches: {bad}"


class TestOptimizers:
    def test_adafactor_state_is_factored(self):
        params = {"mat": np.zeros((6, 4)), "vec": np.zeros(5)}
        opt = make_optimizer(params, TrainConfig(optimizer=OptimizerKind.ADAFACTOR))
        assert opt._state["mat"]["row"].shape == (6,)
        assert opt._state["mat"]["col"].shape == (4,)
        assert opt._state["vec"]["full"].shape == (5,)

    @pytest.mark.parametrize("kind", [OptimizerKind.ADAFACTOR, OptimizerKind.ADAM])
    def test_descends_quadratic(self, kind):
        rng = np.random.default_rng(0)
        params = {"w": rng.normal(size=(8, 8))}
        opt = make_optimizer(params, TrainConfig(optimizer=kind, learning_rate=0.05))
        start = float(np.sum(params["w"] ** 2))
        for _ in range(200):
            opt.update(params, {"w": 2.0 * params["w"]})
        assert float(np.sum(params["w"] ** 2)) < 0.05 * start

    def test_adam_first_step_is_signlike(self):
        params = {"w": np.zeros(4)}
        opt = make_optimizer(
            params, TrainConfig(optimizer=OptimizerKind.ADAM, learning_rate=0.1)
        )
        grads = {"w": np.array([3.0, -2.0, 0.5, -0.1])}
        opt.update(params, grads)
        assert np.allclose(params["w"], -0.1 * np.sign(grads["w"]), atol=1e-6)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        cfg = tiny_config()
        params = init_params(cfg, seed=7)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, params, cfg)
        loaded, loaded_cfg = load_checkpoint(path)
        assert loaded_cfg == cfg
        assert list(loaded) == list(params)
        for name in params:
            assert np.array_equal(loaded[name], params[name])
            assert loaded[name].dtype == params[name].dtype

    def test_float32_round_trip(self, tmp_path):
        cfg = tiny_config()
        params = init_params(cfg, seed=8, dtype=np.float32)
        path = tmp_path / "model32.ckpt"
        save_checkpoint(path, params, cfg)
        loaded, _ = load_checkpoint(path)
        assert loaded["enc0_q"].dtype == np.float32
        assert np.array_equal(loaded["enc0_q"], params["enc0_q"])

    def test_corruption_detected(self, tmp_path):
        cfg = tiny_config()
        params = init_params(cfg, seed=9)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, params, cfg)
        blob = bytearray(path.read_bytes())
        blob[-5] ^= 0xFF
        bad = tmp_path / "corrupt.ckpt"
        bad.write_bytes(bytes(blob))
        with pytest.raises(FormatError):
            load_checkpoint(bad)

    def test_truncation_and_magic(self, tmp_path):
        cfg = tiny_config()
        params = init_params(cfg, seed=9)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, params, cfg)
        blob = path.read_bytes()
        short = tmp_path / "short.ckpt"
        short.write_bytes(blob[:-10])
        with pytest.raises(FormatError):
            load_checkpoint(short)
        wrong = tmp_path / "magic.ckpt"
        wrong.write_bytes(b"X" + blob[1:])
        with pytest.raises(FormatError):
            load_checkpoint(wrong)


class TestTraining:
    def test_empty_dataset(self):
        with pytest.raises(ParameterError):
            train([], TrainConfig(epochs=1), tiny_config())

    def test_seeded_determinism(self):
        cfg = tiny_config()
        rng = np.random.default_rng(11)
        data = random_model_batch(cfg, rng, n_examples=3)
        tc = TrainConfig(epochs=4, batch_size=2, seed=5)
        params_a, hist_a = train(data, tc, cfg)
        params_b, hist_b = train(data, tc, cfg)
        assert hist_a == hist_b
        assert all(np.array_equal(params_a[k], params_b[k]) for k in params_a)
        _, hist_c = train(data, TrainConfig(epochs=4, batch_size=2, seed=6), cfg)
        assert hist_a != hist_c

    def test_divergence_reports_step(self):
        cfg = tiny_config()
        rng = np.random.default_rng(12)
        data = random_model_batch(cfg, rng, n_examples=2)
        params = init_params(cfg, seed=0)
        params["enc0_q"][0, 0] = np.nan
        with np.errstate(all="ignore"):
            with pytest.raises(DivergenceError) as info:
                train(data, TrainConfig(epochs=1, batch_size=2), cfg, params=params)
        assert info.value.step == 0

    def test_single_pair_overfit(self):
        cfg = tiny_config(
            d_model=32, d_ff=64, n_mels=16, max_decode_len=32, num_arrangers=4
        )
        rng = np.random.default_rng(0)
        frames = rng.normal(size=(6, cfg.n_mels))
        targets = (3, 125, 131, 103, 9, 125, 102, 52, 103, EOS)
        tc = TrainConfig(epochs=2000, batch_size=1, seed=0)
        params, history = train([(frames, 2, targets)], tc, cfg)
        assert min(history) < 0.01
        assert greedy_generate(frames, 2, params, cfg).ids == targets
