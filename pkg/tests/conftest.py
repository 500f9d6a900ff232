"""Shared helpers for the test suite."""

import numpy as np

from pianocover.model import compute_loss, init_params, loss_and_grads
from pianocover.tokenizer import EOS


def random_model_batch(config, rng, n_examples=2, n_frames=3, target_len=6):
    """Random (frames, arranger_id, target ids) triples, EOS-terminated."""
    batch = []
    for i in range(n_examples):
        frames = rng.normal(size=(n_frames, config.n_mels))
        ids = tuple(
            int(t) for t in rng.integers(2, config.vocab_size, size=target_len - 1)
        ) + (EOS,)
        batch.append((frames, i % config.num_arrangers, ids))
    return batch


def gradient_check(config, seed, entries_per_tensor, h=1e-5):
    """Worst finite-difference relative error for each parameter tensor.

    Central differences with step h against the analytic gradient on a
    random batch. Differences under 1e-8 absolute count as zero, which
    keeps structurally-zero gradients (untouched embedding rows, unused
    bias buckets) from being judged by floating point noise.
    """
    rng = np.random.default_rng(seed)
    params = init_params(config, seed=seed)
    batch = random_model_batch(config, rng)
    _, grads = loss_and_grads(batch, params, config)
    worst = {}
    for name, w in params.items():
        flat = w.reshape(-1)
        gflat = grads[name].reshape(-1)
        k = min(entries_per_tensor, flat.size)
        picks = rng.choice(flat.size, size=k, replace=False)
        tensor_worst = 0.0
        for i in picks:
            orig = flat[i]
            flat[i] = orig + h
            plus = compute_loss(batch, params, config)
            flat[i] = orig - h
            minus = compute_loss(batch, params, config)
            flat[i] = orig
            numeric = (plus - minus) / (2.0 * h)
            analytic = float(gflat[i])
            err = abs(numeric - analytic)
            if err <= 1e-8:
                continue
            tensor_worst = max(tensor_worst, err / max(abs(numeric), abs(analytic)))
        worst[name] = tensor_worst
    return worst
