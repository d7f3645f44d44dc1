"""Unsupervised training loop.

Each step builds one tape: network forward -> mean pooling -> single M-step
(identity initialization) -> single E-step -> likelihood; the negative log
likelihood (normalized by T*F) is backpropagated into the network
parameters.  The beamformer stays outside the tape.
"""

from __future__ import annotations

import dataclasses
import json
import pathlib
import time

import numpy as np

from . import autodiff as ad
from . import cacgmm, masknet, mixture_graph
from .stft import StftConfig, read_wav, read_wavs, stft

LOSS_VARIANTS = ("ml", "ml_gamma", "ml_equal", "aux_gamma0", "aux_gamma")


@dataclasses.dataclass
class TrainConfig:
    loss_variant: str = "ml_equal"
    activation: str = "softmax"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 5.0
    batch_size: int = 1  # utterances accumulated per optimizer update
    steps: int = 2000
    pa_interval: int = 100  # 0 disables permutation-alignment weight fixes
    seed: int = 0
    hidden: int = masknet.HIDDEN
    ff_units: int = masknet.FF_UNITS
    stft: StftConfig = dataclasses.field(default_factory=StftConfig)
    holdout: int = 4  # utterances reserved for permutation alignment

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("step count must be >= 1")
        if self.loss_variant not in LOSS_VARIANTS:
            raise ValueError(
                f"loss_variant must be one of {LOSS_VARIANTS}, "
                f"got {self.loss_variant!r}"
            )
        if self.activation not in ("softmax", "sigmoid"):
            raise ValueError(f"unknown activation {self.activation!r}")


def build_loss_graph(tape, params_np, spec, cfg):
    """Forward + single EM step + likelihood on one tape.

    Returns (loss node, dict of interesting nodes).  The loss is the
    negative log likelihood divided by T*F.
    """
    if spec.shape[0] < 2:
        raise ValueError("training needs at least two channels")
    _, t, f = spec.shape
    ytilde = cacgmm.normalize(spec)  # constant (T, F, D)

    _, gamma0 = masknet.forward(tape, params_np, spec, cfg.activation)
    pi, shapes = mixture_graph.m_step_graph(gamma0, ytilde, fixed_point_iters=1)
    log_p = mixture_graph.log_density_graph(shapes, ytilde)
    gamma, _, _ = mixture_graph.e_step_graph(pi, log_p)

    variant = cfg.loss_variant
    if variant == "ml":
        ll = mixture_graph.log_likelihood_graph(pi, log_p, "ml")
    elif variant == "ml_gamma":
        # refit the mixture from the updated affiliations, then score
        pi2, shapes2 = mixture_graph.m_step_graph(gamma, ytilde,
                                                  fixed_point_iters=1)
        log_p2 = mixture_graph.log_density_graph(shapes2, ytilde)
        ll = mixture_graph.log_likelihood_graph(pi2, log_p2, "ml")
    elif variant == "ml_equal":
        ll = mixture_graph.log_likelihood_graph(pi, log_p, "ml_equal")
    elif variant == "aux_gamma0":
        ll = mixture_graph.log_likelihood_graph(pi, log_p, "auxiliary", gamma0)
    else:  # aux_gamma
        ll = mixture_graph.log_likelihood_graph(pi, log_p, "auxiliary", gamma)
    loss = ad.mul(ad.neg(ll), 1.0 / (t * f))
    nodes = {"gamma0": gamma0, "gamma": gamma, "pi": pi, "shapes": shapes,
             "log_likelihood": ll}
    return loss, nodes


def training_step(params_np, spec, cfg):
    """One utterance: returns (grads, normalized loss, diagnostics).

    Raises FloatingPointError when the loss goes non-finite (the caller
    rejects the step); diagnostics carry the raw log likelihood.
    """
    tape = ad.Tape()
    loss, nodes = build_loss_graph(tape, params_np, spec, cfg)
    loss_value = float(loss.value)
    if not np.isfinite(loss_value):
        raise FloatingPointError(f"non-finite loss {loss_value}")
    grads = tape.backward(loss)
    diagnostics = {
        "log_likelihood": float(nodes["log_likelihood"].value),
        "gamma0": nodes["gamma0"].value,
    }
    return grads, loss_value, diagnostics


def clip_gradients(grads, max_norm):
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        grads = {k: g * scale for k, g in grads.items()}
    return grads, total


class Adam:
    def __init__(self, params_np, cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params_np.items()}
        self.v = {k: np.zeros_like(v) for k, v in params_np.items()}
        self.t = 0

    def update(self, params_np, grads):
        cfg = self.cfg
        self.t += 1
        out = {}
        bc1 = 1.0 - cfg.beta1**self.t
        bc2 = 1.0 - cfg.beta2**self.t
        for k, p in params_np.items():
            g = grads[k]
            self.m[k] = cfg.beta1 * self.m[k] + (1 - cfg.beta1) * g
            self.v[k] = cfg.beta2 * self.v[k] + (1 - cfg.beta2) * g * g
            mhat = self.m[k] / bc1
            vhat = self.v[k] / bc2
            out[k] = p - cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.adam_eps)
        return out

    def permute_output_state(self, perm_map, num_bins):
        """Keep optimizer moments consistent with permuted output weights."""
        for store in (self.m, self.v):
            fake = {"w_out": store["w_out"], "b_out": store["b_out"]}
            permuted = masknet.permute_output_weights(fake, perm_map)
            store["w_out"] = permuted["w_out"]
            store["b_out"] = permuted["b_out"]


def load_manifest(path):
    path = pathlib.Path(path)
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    if not records:
        raise ValueError(f"manifest {path} is empty")
    return records


def load_utterance(record, base_dir):
    base = pathlib.Path(base_dir)
    if "wav" in record:
        clip = read_wav(base / record["wav"])
    elif "wavs" in record:
        clip = read_wavs([base / p for p in record["wavs"]])
    else:
        raise ValueError(f"manifest record {record.get('id')} names no audio")
    return clip


def train(manifest_path, cfg: TrainConfig, params_np=None, log=None):
    """Run the unsupervised training loop over a JSON-lines manifest.

    Returns (params, report dict).  Deterministic given cfg.seed.
    """
    records = load_manifest(manifest_path)
    base_dir = pathlib.Path(manifest_path).parent
    clips = [load_utterance(r, base_dir) for r in records]
    specs = [stft(c, cfg.stft) for c in clips]
    return train_on_specs(specs, cfg, params_np=params_np, log=log)


def train_on_specs(specs, cfg: TrainConfig, params_np=None, log=None):
    """Training loop over precomputed (D, T, F) spectrograms."""
    num_bins = cfg.stft.num_bins
    if params_np is None:
        params_np, _ = masknet.init_params(
            num_bins, hidden=cfg.hidden, ff_units=cfg.ff_units,
            seed=cfg.seed, activation=cfg.activation)
    opt = Adam(params_np, cfg)
    rng = np.random.default_rng(cfg.seed)

    n_holdout = min(cfg.holdout, max(0, len(specs) - 1)) if cfg.pa_interval else 0
    holdout = specs[:n_holdout]
    pool_specs = specs[n_holdout:] if n_holdout else specs

    order = []
    losses = []
    grad_norms = []
    pa_log = []
    rejected = 0
    accum = None
    accum_count = 0
    start = time.monotonic()

    for step in range(cfg.steps):
        if not order:
            order = list(rng.permutation(len(pool_specs)))
        spec = pool_specs[order.pop()]
        try:
            grads, loss_value, _ = training_step(params_np, spec, cfg)
        except FloatingPointError:
            rejected += 1
            losses.append(float("nan"))
            if rejected >= max(1, (step + 1) // 2) and step >= 10:
                raise RuntimeError(
                    f"{rejected} of {step + 1} steps rejected; aborting"
                )
            continue
        losses.append(loss_value)
        if accum is None:
            accum = grads
        else:
            accum = {k: accum[k] + grads[k] for k in accum}
        accum_count += 1
        if accum_count >= cfg.batch_size:
            if cfg.batch_size > 1:
                accum = {k: g / cfg.batch_size for k, g in accum.items()}
            accum, norm = clip_gradients(accum, cfg.clip_norm)
            grad_norms.append(norm)
            params_np = opt.update(params_np, accum)
            accum = None
            accum_count = 0

        if cfg.pa_interval and (step + 1) % cfg.pa_interval == 0 and holdout:
            perm_map = _holdout_permutation(params_np, holdout, cfg)
            swapped = int(np.sum(perm_map[:, 0] != 0))
            if swapped:
                params_np = masknet.permute_output_weights(params_np, perm_map)
                opt.permute_output_state(perm_map, num_bins)
            pa_log.append({"step": step + 1, "swapped_bins": swapped})
        if log is not None and (step + 1) % max(1, cfg.steps // 20) == 0:
            log(step + 1, loss_value)

    wall = time.monotonic() - start
    finite = [x for x in losses if np.isfinite(x)]
    tenth = max(1, len(finite) // 10)
    report = {
        "losses": losses,
        "grad_norms": grad_norms,
        "permutation_fixes": pa_log,
        "rejected_steps": rejected,
        "wall_clock_sec": wall,
        "loss_first_tenth": float(np.mean(finite[:tenth])),
        "loss_last_tenth": float(np.mean(finite[-tenth:])),
    }
    return params_np, report


def _holdout_permutation(params_np, holdout_specs, cfg):
    """Permutation map from the pooled network masks of the held-out batch."""
    gammas = []
    for spec in holdout_specs:
        gammas.append(
            masknet.infer_masks_net(params_np, spec, cfg.activation, "mean")
        )
    gamma = np.concatenate(gammas, axis=1)  # stack along time
    _, perm_map = cacgmm.permutation_align(gamma)
    return perm_map


def infer_masks(params_np, spec, activation, extra_em_step=True):
    """Inference-time masks: median-pooled network output, optionally
    refined by one M-step (identity init) and one E-step."""
    gamma_net = masknet.infer_masks_net(params_np, spec, activation, "median")
    if not extra_em_step:
        return gamma_net
    ytilde = cacgmm.normalize(spec)
    params, _ = cacgmm.m_step(ytilde, gamma_net, shapes_init=None,
                              fixed_point_iters=1)
    return cacgmm.e_step(ytilde, params)
