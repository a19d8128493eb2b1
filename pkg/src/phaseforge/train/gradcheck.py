"""Finite-difference oracle for the sequence objectives on small random nets."""

from __future__ import annotations

import numpy as np

from ..nn.gradcheck import finite_diff_grads, kink_margin, max_relative_error
from ..nn.params import ENDON2N_VANILLA, ArchSpec, init_params
from .bptt import SequenceData, full_bptt_grads, sequence_loss

# Stencil steps: encoder tensors move ReLU pre-activations, so they get the
# smaller step; everything downstream of the encoder only meets the
# smooth-L1 kinks, which the margin check keeps far away.
ENCODER_EPS = 3e-4
HEAD_EPS = 1e-3
MIN_MARGIN = 5e-3


def toy_problem(variant, seed, D=8, F=12, H=16, M=3, T=10):
    """Random net and random sequence with targets for ``variant``."""
    spec = ArchSpec(variant, input_dim=D, encoder_widths=(16, F), lstm_hidden=H, num_phases=M)
    params = init_params(spec, seed)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    seq = SequenceData(
        f"toy-{seed}", rng.normal(size=(T, D)), np.ones(T), np.sort(rng.uniform(0.05, 1.0, T)),
        phase=rng.integers(1, M + 1, T), rsd=rng.uniform(0.0, 3.0, T),
        prog=np.arange(1, T + 1) / T,
    )
    return params, seq


def margin_of(params, seq) -> float:
    elapsed = None if params.spec.variant == ENDON2N_VANILLA else seq.elapsed
    return kink_margin(params, seq.frames, elapsed, seq.rsd, seq.prog)


def sequence_gradcheck(variant, seed=0, max_tries=50, **dims):
    """Max relative error between analytic and five-point finite-difference gradients.

    Seeds are scanned from ``seed`` upward until the evaluation point lies at
    least ``MIN_MARGIN`` from every kink. Returns a dict with the error, the
    seed actually used and its kink margin.
    """
    for s in range(seed, seed + max_tries):
        params, seq = toy_problem(variant, s, **dims)
        margin = margin_of(params, seq)
        if margin >= MIN_MARGIN:
            break
    else:
        raise RuntimeError(f"no kink-free toy net found in {max_tries} seeds")
    _, analytic = full_bptt_grads(params, seq)
    eps = {n: ENCODER_EPS for n in params.names() if n.startswith("enc.")}
    eps["default"] = HEAD_EPS
    numeric = finite_diff_grads(lambda p: sequence_loss(p, seq), params, eps, order=4)
    return {"variant": variant, "seed": s, "margin": margin,
            "max_rel_error": max_relative_error(analytic, numeric),
            "n_params": sum(a.size for a in params.arrays.values())}
