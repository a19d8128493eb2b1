"""Training pipelines for every stage of the phase-recognition workflow."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np

from ..eval.predict import predict_labels_fast
from ..nn.layers import encoder_forward
from ..nn.model import (
    frame_phase_loss_grad, frame_progress_loss_grad, tempcon_forward, tempcon_loss_grad,
)
from ..nn.params import (
    ENDON2N_UPDATED, ENDON2N_VANILLA, PHASE_ENCODER, PROGRESS_ENCODER, RSD_PROGRESS, TEMPCON,
    init_params,
)
from ..parallel import map_ordered
from ..records import label_guard
from ..synth import derive_progress_labels
from .bptt import full_bptt_grads, make_sequence, truncated_bptt_grads
from .optim import frozen_layers, lr_multipliers, make_optimizer
from .transfer import transfer_weights


@dataclass
class TrainLog:
    """One row per update plus per-epoch validation rows."""

    stage: str = ""
    rows: list = field(default_factory=list)
    epochs: list = field(default_factory=list)
    _t0: float = field(default_factory=time.perf_counter)

    def update(self, iteration, loss, lr):
        self.rows.append({"stage": self.stage, "iter": iteration, "loss": float(loss), "lr": lr,
                          "wall_time": round(time.perf_counter() - self._t0, 4)})

    def epoch(self, **values):
        self.epochs.append({"stage": self.stage, **values})

    def losses(self):
        return np.array([r["loss"] for r in self.rows])

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["stage", "iter", "loss", "lr", "wall_time"])
            w.writeheader()
            w.writerows(self.rows)


def _batches(n, batch_size, iterations, rng):
    """Index batches from successive seeded permutations of range(n)."""
    bs = min(batch_size, n)
    order = rng.permutation(n)
    pos = 0
    for _ in range(iterations):
        if pos + bs > n:
            order = rng.permutation(n)
            pos = 0
        yield order[pos:pos + bs]
        pos += bs


def base_model(spec, seed):
    """Fresh store whose encoder plays the role of generic pre-trained weights.

    Only the task heads count as randomly initialized (10x learning rate).
    """
    params = init_params(spec, seed)
    return params.copy(random_init=frozenset(n for n in params.arrays if not n.startswith("enc.")))


def labeled_frames(records):
    """Stack frames and 1-based phase labels of several videos."""
    X = np.concatenate([r.frames for r in records])
    y = np.concatenate([r.phase_labels for r in records])
    return X, y


def _frame_training(params, X, targets, cfg, seed, loss_grad, stage, log):
    if X.shape[0] == 0:
        raise ValueError(f"{stage}: empty training set")
    params = params.copy(stage=stage)
    opt = make_optimizer(cfg)
    mult = lr_multipliers(params, cfg.lr_mult_random)
    rng = np.random.default_rng(seed)
    log = log if log is not None else TrainLog()
    log.stage = stage
    for it, idx in enumerate(_batches(X.shape[0], cfg.batch_size, cfg.iterations, rng)):
        loss, grads = loss_grad(params, X[idx], targets[idx])
        lr = cfg.lr(it)
        opt.update(params, grads, it, frozenset(), mult)
        log.update(it, loss, lr)
    params.iteration = cfg.iterations
    return params


def train_phase_encoder(X, y, cfg, init, seed=0, log=None):
    """Encoder + fc'_phase on shuffled labeled frames with the per-frame logistic loss."""
    if init.spec.variant != PHASE_ENCODER:
        raise ValueError("train_phase_encoder needs a phase-encoder store")
    return _frame_training(init, np.asarray(X), np.asarray(y), cfg, seed, frame_phase_loss_grad,
                           "phase_encoder", log)


def train_progress_encoder(records, cfg, init, seed=0, log=None):
    """Encoder + fc'_prog regressing per-frame progress; never reads phase labels."""
    if init.spec.variant != PROGRESS_ENCODER:
        raise ValueError("train_progress_encoder needs a progress-encoder store")
    if not records:
        raise ValueError("progress_encoder: empty dataset")
    with label_guard("progress_encoder"):
        X = np.concatenate([r.frames for r in records])
        y = np.concatenate([derive_progress_labels(r) for r in records])
        return _frame_training(init, X, y, cfg, seed, frame_progress_loss_grad, "progress_encoder", log)


def validation_accuracy(params, records) -> float:
    """Frame accuracy pooled over validation videos."""
    preds = map_ordered(lambda r: predict_labels_fast(params, r), records)
    hits = sum(int(np.sum(p == r.phase_labels)) for p, r in zip(preds, records))
    return 100.0 * hits / sum(r.num_frames for r in records)


def _sequence_training(params, seqs, cfg, seed, stage, log, frozen, val_fn=None, features=None,
                       exact=False):
    """Shared loop: one update per video, seeded video order per epoch.

    Returns (final or best-validation params, history).
    """
    if not seqs:
        raise ValueError(f"{stage}: empty dataset")
    n = len(seqs)
    iterations, step_size = cfg.scaled_schedule(n)
    opt = make_optimizer(cfg, step_size)
    mult = lr_multipliers(params, cfg.lr_mult_random)
    rng = np.random.default_rng(seed)
    log = log if log is not None else TrainLog()
    log.stage = stage
    best, best_score, history = None, -math.inf, []
    it, epoch = 0, 0
    while it < iterations:
        epoch_losses = []
        for vi in rng.permutation(n):
            if it >= iterations:
                break
            feats = None if features is None else features[vi]
            if exact:
                loss, grads = full_bptt_grads(params, seqs[vi], features=feats,
                                              encoder=features is None, max_len=None)
            else:
                loss, grads = truncated_bptt_grads(params, seqs[vi], cfg.subseq_len, features=feats,
                                                   encoder=features is None)
            lr = cfg.lr(it, step_size)
            opt.update(params, grads, it, frozen, mult)
            log.update(it, loss, lr)
            epoch_losses.append(loss)
            it += 1
        epoch += 1
        entry = {"epoch": epoch, "iteration": it, "train_loss": float(np.mean(epoch_losses))}
        if val_fn is not None:
            entry["val_score"] = val_fn(params)
            if entry["val_score"] > best_score:
                best_score = entry["val_score"]
                best = params.copy(iteration=it)
        history.append(entry)
        log.epoch(**entry)
    params.iteration = it
    if best is not None:
        best.extra = {**best.extra, "selected_epoch_iteration": best.iteration,
                      "val_score": best_score}
        return best, history
    return params, history


def train_endon2n(train_records, cfg, init, val_records=(), seed=0, log=None):
    """End-to-end encoder-LSTM training with truncated BPTT and forwarded state.

    ``init`` is an endon2n store (vanilla or updated) whose encoder came
    from phase fine-tuning or a pre-training transfer. With validation
    videos, the best-validation epoch is returned.
    """
    if init is None:
        raise ValueError("train_endon2n needs an initialized model")
    if init.spec.variant not in (ENDON2N_VANILLA, ENDON2N_UPDATED):
        raise ValueError(f"train_endon2n cannot train a {init.spec.variant} store")
    s_norm = init.spec.s_norm
    seqs = [make_sequence(r, s_norm, cfg.pad_to, "phase") for r in train_records]
    params = init.copy(stage="endon2n")
    frozen = frozen_layers(params, ("fcp_prog",))
    val_records = list(val_records)
    val_fn = (lambda p: validation_accuracy(p, val_records)) if val_records else None
    return _sequence_training(params, seqs, cfg, seed, "endon2n", log, frozen, val_fn)


def extract_features(encoder_params, records):
    return map_ordered(lambda r: encoder_forward(encoder_params, r.frames)[0], records)


def train_endolstm(train_records, cfg, encoder, val_records=(), seed=0, log=None):
    """Two-step baseline: frozen encoder features, LSTM + fc_phase trained with exact BPTT."""
    if encoder is None:
        raise ValueError("train_endolstm needs a fine-tuned encoder")
    spec = encoder.spec.with_variant(ENDON2N_VANILLA)
    params = transfer_weights(encoder, spec, seed).copy(stage="endolstm")
    frozen = frozen_layers(params, ("enc",))
    seqs = [make_sequence(r, spec.s_norm, cfg.pad_to, "phase") for r in train_records]
    feats = extract_features(params, train_records)
    padded = []
    for s, f in zip(seqs, feats):
        full = np.zeros((s.length, f.shape[1]))
        full[: f.shape[0]] = f
        padded.append(full)
    val_records = list(val_records)
    val_fn = (lambda p: validation_accuracy(p, val_records)) if val_records else None
    return _sequence_training(params, seqs, cfg, seed, "endolstm", log, frozen, val_fn,
                              features=padded, exact=True)


def pretrain_rsd(records, cfg, progress_encoder, seed=0, log=None):
    """Multi-task RSD + progress pre-training of the time-input encoder-LSTM.

    fc'_prog (the frame-level progress head) stays frozen. Runs inside a
    forbidding label guard: any phase-label read raises.
    """
    if progress_encoder is None or progress_encoder.spec.variant != PROGRESS_ENCODER:
        raise ValueError("pretrain_rsd needs a progress-trained encoder")
    with label_guard("pretrain-rsd"):
        spec = progress_encoder.spec.with_variant(RSD_PROGRESS)
        params = transfer_weights(progress_encoder, spec, seed).copy(stage="rsd")
        frozen = frozen_layers(params, ("fcp_prog",))
        seqs = [make_sequence(r, spec.s_norm, cfg.pad_to, "rsd") for r in records]
        return _sequence_training(params, seqs, cfg, seed, "rsd", log, frozen)


def pretrain_tempcon(A, B, labels, cfg, init, seed=0, log=None):
    """Siamese frame-order pre-training; returns the trained tempcon store."""
    if init.spec.variant != TEMPCON:
        raise ValueError("pretrain_tempcon needs a tempcon store")
    n = len(labels)
    if n == 0:
        raise ValueError("tempcon: no frame pairs")
    with label_guard("pretrain-tempcon"):
        if cfg.epochs is not None:
            cfg_iters = int(math.ceil(cfg.epochs * n / min(cfg.batch_size, n)))
        else:
            cfg_iters = cfg.iterations
        params = init.copy(stage="tempcon")
        opt = make_optimizer(cfg)
        mult = lr_multipliers(params, cfg.lr_mult_random)
        rng = np.random.default_rng(seed)
        log = log if log is not None else TrainLog()
        log.stage = "tempcon"
        for it, idx in enumerate(_batches(n, cfg.batch_size, cfg_iters, rng)):
            loss, grads = tempcon_loss_grad(params, A[idx], B[idx], labels[idx])
            lr = cfg.lr(it)
            opt.update(params, grads, it, frozenset(), mult)
            log.update(it, loss, lr)
        params.iteration = cfg_iters
        return params


def tempcon_accuracy(params, A, B, labels) -> float:
    logits, _ = tempcon_forward(params, A, B)
    return 100.0 * float(np.mean(np.argmax(logits, axis=1) == labels))
