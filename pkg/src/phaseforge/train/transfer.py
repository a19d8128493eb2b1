"""Weight transfer between training stages.

Transfer table (source arch -> destination arch: layers copied by name)::

    phase-encoder    -> endon2n-vanilla, endon2n-updated   enc
    phase-encoder    -> phase-encoder                      enc, fcp_phase
    progress-encoder -> rsd-progress                       enc, fcp_prog
    progress-encoder -> phase-encoder                      enc
    rsd-progress     -> endon2n-updated                    enc, fcp_prog, lstm
    rsd-progress     -> phase-encoder                      enc
    tempcon          -> phase-encoder, endon2n-vanilla,
                        endon2n-updated                    enc

Names present only in the source (fcp_phase, fc_rsd, fc_order, ...) are
dropped; names missing from the source are freshly initialized and tagged
in ``random_init`` so they get the larger learning rate.
"""

from __future__ import annotations

from ..nn.params import (
    ENDON2N_UPDATED, ENDON2N_VANILLA, PHASE_ENCODER, PROGRESS_ENCODER, RSD_PROGRESS, TEMPCON,
    ArchSpec, ParamStore, init_params,
)

TRANSFERS = {
    (PHASE_ENCODER, ENDON2N_VANILLA), (PHASE_ENCODER, ENDON2N_UPDATED), (PHASE_ENCODER, PHASE_ENCODER),
    (PROGRESS_ENCODER, RSD_PROGRESS), (PROGRESS_ENCODER, PHASE_ENCODER),
    (RSD_PROGRESS, ENDON2N_UPDATED), (RSD_PROGRESS, PHASE_ENCODER),
    (TEMPCON, PHASE_ENCODER), (TEMPCON, ENDON2N_VANILLA), (TEMPCON, ENDON2N_UPDATED),
}


class IncompatibleTransfer(ValueError):
    pass


def transfer_weights(src: ParamStore, dst_spec: ArchSpec, seed: int = 0,
                     base: ParamStore | None = None) -> ParamStore:
    """Name-matched copy of ``src`` into a ``dst_spec`` store.

    ``base`` (a store for ``dst_spec``) supplies the non-transferred names
    instead of a fresh initialization, which lets two sources be combined.
    """
    if (src.spec.variant, dst_spec.variant) not in TRANSFERS:
        raise IncompatibleTransfer(f"no transfer rule {src.spec.variant} -> {dst_spec.variant}")
    if base is not None:
        if base.spec != dst_spec:
            raise IncompatibleTransfer("base store does not match the destination spec")
        dst = base.copy()
    else:
        dst = init_params(dst_spec, seed)
    copied = set()
    for name, arr in dst.arrays.items():
        if name not in src.arrays:
            continue
        if src.arrays[name].shape != arr.shape:
            raise IncompatibleTransfer(f"{name}: shape {src.arrays[name].shape} vs {arr.shape}")
        dst.arrays[name] = src.arrays[name].copy()
        copied.add(name)
    return dst.copy(random_init=frozenset(dst.random_init - copied), stage=f"transfer:{src.stage}",
                    iteration=0)
