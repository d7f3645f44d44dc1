"""Trainable mask estimator.

A small bidirectional recurrent network followed by two feed-forward layers
and a per-frequency two-class output, applied to each microphone channel
independently on log-power features.  Per-channel masks are pooled with a
mean (training) or median (inference) over channels.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad

FEATURE_FLOOR = 1e-10
HIDDEN = 64
FF_UNITS = 128


def init_params(num_bins, hidden=HIDDEN, ff_units=FF_UNITS, seed=0,
                activation="softmax"):
    """Uniform +-1/sqrt(fan-in) initialization; returns (params, meta).

    params is a dict of float64 arrays; meta records the architecture and
    activation for checkpointing.
    """
    if activation not in ("softmax", "sigmoid"):
        raise ValueError(f"unknown activation {activation!r}")
    rng = np.random.default_rng(seed)

    def u(fan_in, *shape):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    params = {
        "in_scale": np.ones(num_bins),
        "in_bias": np.zeros(num_bins),
        "w1": u(2 * hidden, 2 * hidden, ff_units),
        "b1": np.zeros(ff_units),
        "w2": u(ff_units, ff_units, ff_units),
        "b2": np.zeros(ff_units),
        "w_out": u(ff_units, ff_units, 2 * num_bins),
        "b_out": np.zeros(2 * num_bins),
    }
    for direction in ("fwd", "bwd"):
        params[f"wx_{direction}"] = u(num_bins, num_bins, hidden)
        params[f"wh_{direction}"] = u(hidden, hidden, hidden)
        params[f"bh_{direction}"] = np.zeros(hidden)
    meta = {
        "num_bins": int(num_bins),
        "hidden": int(hidden),
        "ff_units": int(ff_units),
        "activation": activation,
        "num_classes": 2,
        "layers": sorted(params),
    }
    return params, meta


def features(spec):
    """Log-power features, mean/variance normalized per channel and bin.

    spec: (D, T, F) complex -> (D, T, F) float.
    """
    logpow = np.log((spec * np.conj(spec)).real + FEATURE_FLOOR)
    mu = logpow.mean(axis=1, keepdims=True)
    sigma = logpow.std(axis=1, keepdims=True)
    return (logpow - mu) / np.maximum(sigma, 1e-6)


def _rnn(x, wx, wh, bh, reverse=False):
    """Simple tanh RNN over the time axis; x (D, T, Fin) -> (D, T, H)."""
    d, t, _ = x.shape
    h = np.zeros((d, wh.shape[0]))
    order = range(t - 1, -1, -1) if reverse else range(t)
    # one big input projection; the recurrence then slices (D, T, H)
    xw = ad.add(ad.matmul(x, wx), bh)
    steps = [None] * t
    for ti in order:
        h = ad.tanh(ad.add(xw[:, ti], ad.matmul(h, wh)))
        steps[ti] = h
    return ad.stack(steps, axis=1)


def forward(tape, params_np, spec, activation):
    """Per-channel mask network on the tape.

    Returns (per_channel (D, K, T, F) tensor, pooled γ⁰ (K, T, F) tensor).
    Pooling is the training-time mean over channels; sigmoid outputs are
    renormalized to sum to one over classes after pooling.
    """
    d, t, f = spec.shape
    p = {k: tape.leaf(v, k) for k, v in params_np.items()}
    feats = features(spec)  # constant (D, T, F)
    x = ad.add(ad.mul(feats, p["in_scale"]), p["in_bias"])

    h_fwd = _rnn(x, p["wx_fwd"], p["wh_fwd"], p["bh_fwd"])
    h_bwd = _rnn(x, p["wx_bwd"], p["wh_bwd"], p["bh_bwd"], reverse=True)
    h = ad.concat([h_fwd, h_bwd], axis=-1)  # (D, T, 2H)

    a1 = ad.relu(ad.add(ad.matmul(h, p["w1"]), p["b1"]))
    a2 = ad.relu(ad.add(ad.matmul(a1, p["w2"]), p["b2"]))
    logits = ad.add(ad.matmul(a2, p["w_out"]), p["b_out"])  # (D, T, 2F)
    logits = ad.reshape(logits, (d, t, 2, f))

    if activation == "softmax":
        masks = ad.softmax(logits, axis=2)
    elif activation == "sigmoid":
        masks = ad.sigmoid(logits)
    else:
        raise ValueError(f"unknown activation {activation!r}")
    per_channel = ad.transpose(masks, (0, 2, 1, 3))  # (D, K, T, F)

    pooled = ad.mean(per_channel, axis=0)  # (K, T, F)
    total = ad.maximum(ad.sum_(pooled, axis=0, keepdims=True), FEATURE_FLOOR)
    gamma0 = ad.div(pooled, total)
    return per_channel, gamma0


def infer_masks_net(params_np, spec, activation, pool_mode="median"):
    """Plain-numpy forward for inference; returns pooled masks (K, T, F)."""
    tape = ad.Tape()
    per_channel, gamma0 = forward(tape, params_np, spec, activation)
    if pool_mode == "mean":
        return gamma0.value
    return pool(per_channel.value, "median")


def pool(per_channel, mode):
    """Pool per-channel masks (D, K, T, F) over channels.

    median pooling renormalizes over classes afterwards (even channel counts
    average the middle two values).
    """
    per_channel = np.asarray(per_channel)
    if mode == "mean":
        pooled = per_channel.mean(axis=0)
        return pooled / np.maximum(pooled.sum(axis=0, keepdims=True), FEATURE_FLOOR)
    if mode == "median":
        pooled = np.median(per_channel, axis=0)
        return pooled / np.maximum(pooled.sum(axis=0, keepdims=True), FEATURE_FLOOR)
    raise ValueError(f"unknown pooling mode {mode!r}")


def permute_output_weights(params_np, perm_map):
    """Swap output-layer weights per frequency according to a permutation map.

    perm_map: (F, K) from ``cacgmm.permutation_align``; forward(params')
    equals the class-permuted forward(params) exactly.  Returns new params.
    """
    perm_map = np.asarray(perm_map)
    w_out = params_np["w_out"]
    b_out = params_np["b_out"]
    f = perm_map.shape[0]
    k = perm_map.shape[1]
    if w_out.shape[-1] != k * f:
        raise ValueError(
            f"permutation map for {f} frequencies x {k} classes does not "
            f"match output layer of width {w_out.shape[-1]}"
        )
    if np.any(np.sort(perm_map, axis=1) != np.arange(k)):
        raise ValueError("malformed permutation map")
    # output unit (t, k, f) sits at column k*F + f (reshape to (T, K, F))
    cols = perm_map.T * f + np.arange(f)[None, :]  # (K, F) source columns
    new_w = w_out.copy()
    new_b = b_out.copy()
    for ki in range(k):
        new_w[:, ki * f + np.arange(f)] = w_out[:, cols[ki]]
        new_b[ki * f + np.arange(f)] = b_out[cols[ki]]
    out = dict(params_np)
    out["w_out"] = new_w
    out["b_out"] = new_b
    return out
