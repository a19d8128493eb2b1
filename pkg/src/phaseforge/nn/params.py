"""Architecture specs, parameter stores, initialization and checkpoints.

Parameter naming (``W`` matrices are stored output-major, ``y = W @ x + b``):

=================  ===========================================  =============
name               role                                         shape
=================  ===========================================  =============
enc.W{k}/enc.b{k}  encoder layer k (ReLU)                       (w_k, w_{k-1})
fcp_phase.*        frame-level phase head on encoder features   (M, F)
fcp_prog.*         frame-level progress head (sigmoid)          (1, F)
lstm.Wx            input-to-gates, gate blocks [i, f, o, g]     (4H, I)
lstm.Wh            hidden-to-gates                              (4H, H)
lstm.b             gate biases (forget block starts at 1)       (4H,)
fc_phase.*         sequence phase head on LSTM output           (M, H)
fc_rsd.*           remaining-duration head (linear)             (1, H)
fc_prog.*          sequence progress head (sigmoid)             (1, H)
fc_order.*         siamese order classifier on [f_a, f_b]       (2, 2F)
=================  ===========================================  =============
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np

PHASE_ENCODER = "phase-encoder"
ENDON2N_VANILLA = "endon2n-vanilla"
ENDON2N_UPDATED = "endon2n-updated"
PROGRESS_ENCODER = "progress-encoder"
RSD_PROGRESS = "rsd-progress"
TEMPCON = "tempcon"

VARIANTS = (PHASE_ENCODER, ENDON2N_VANILLA, ENDON2N_UPDATED, PROGRESS_ENCODER, RSD_PROGRESS, TEMPCON)
SEQUENCE_VARIANTS = (ENDON2N_VANILLA, ENDON2N_UPDATED, RSD_PROGRESS)

# variant -> layer groups it owns
_LAYERS = {
    PHASE_ENCODER: ("enc", "fcp_phase"),
    ENDON2N_VANILLA: ("enc", "lstm", "fc_phase"),
    ENDON2N_UPDATED: ("enc", "fcp_prog", "lstm", "fc_phase"),
    PROGRESS_ENCODER: ("enc", "fcp_prog"),
    RSD_PROGRESS: ("enc", "fcp_prog", "lstm", "fc_rsd", "fc_prog"),
    TEMPCON: ("enc", "fc_order"),
}


@dataclass(frozen=True)
class ArchSpec:
    variant: str
    input_dim: int = 16
    encoder_widths: tuple = (64, 32)
    lstm_hidden: int = 128
    num_phases: int = 7
    s_norm: float = 5.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        object.__setattr__(self, "encoder_widths", tuple(int(w) for w in self.encoder_widths))
        if self.input_dim < 1 or self.lstm_hidden < 1 or self.num_phases < 1:
            raise ValueError("dimensions must be >= 1")
        if not self.encoder_widths or min(self.encoder_widths) < 1:
            raise ValueError("encoder needs at least one layer of width >= 1")
        if self.s_norm <= 0:
            raise ValueError("s_norm must be positive")

    @property
    def feature_dim(self) -> int:
        return self.encoder_widths[-1]

    @property
    def layers(self) -> tuple:
        return _LAYERS[self.variant]

    @property
    def uses_time_inputs(self) -> bool:
        """Updated EndoN2N and the RSD net feed elapsed time + predicted progress to the LSTM."""
        return self.variant in (ENDON2N_UPDATED, RSD_PROGRESS)

    @property
    def lstm_input_dim(self) -> int:
        return self.feature_dim + (2 if self.uses_time_inputs else 0)

    def with_variant(self, variant: str) -> "ArchSpec":
        return ArchSpec(variant, self.input_dim, self.encoder_widths, self.lstm_hidden,
                        self.num_phases, self.s_norm)

    def shapes(self) -> dict:
        D, F, H, M = self.input_dim, self.feature_dim, self.lstm_hidden, self.num_phases
        out = {}
        for layer in self.layers:
            if layer == "enc":
                fan = D
                for k, w in enumerate(self.encoder_widths):
                    out[f"enc.W{k}"] = (w, fan)
                    out[f"enc.b{k}"] = (w,)
                    fan = w
            elif layer == "lstm":
                I = self.lstm_input_dim
                out["lstm.Wx"] = (4 * H, I)
                out["lstm.Wh"] = (4 * H, H)
                out["lstm.b"] = (4 * H,)
            else:
                rows, cols = {
                    "fcp_phase": (M, F), "fcp_prog": (1, F), "fc_phase": (M, H),
                    "fc_rsd": (1, H), "fc_prog": (1, H), "fc_order": (2, 2 * F),
                }[layer]
                out[f"{layer}.W"] = (rows, cols)
                out[f"{layer}.b"] = (rows,)
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_widths"] = list(self.encoder_widths)
        return d

    @classmethod
    def from_dict(cls, d) -> "ArchSpec":
        return cls(**{**d, "encoder_widths": tuple(d["encoder_widths"])})


def layer_of(name: str) -> str:
    return name.split(".", 1)[0]


@dataclass
class ParamStore:
    """Named float64 arrays for one architecture plus provenance metadata.

    ``random_init`` lists the parameters that were freshly initialized (as
    opposed to transferred); training gives them the larger learning rate.
    """

    spec: ArchSpec
    arrays: dict
    seed: int = 0
    stage: str = "init"
    iteration: int = 0
    random_init: frozenset = frozenset()
    extra: dict = field(default_factory=dict)

    @property
    def arch_tag(self) -> str:
        return self.spec.variant

    def __getitem__(self, name):
        return self.arrays[name]

    def __contains__(self, name):
        return name in self.arrays

    def names(self):
        return list(self.arrays)

    def copy(self, **changes) -> "ParamStore":
        kw = dict(spec=self.spec, arrays={k: v.copy() for k, v in self.arrays.items()},
                  seed=self.seed, stage=self.stage, iteration=self.iteration,
                  random_init=self.random_init, extra=dict(self.extra))
        kw.update(changes)
        return ParamStore(**kw)

    def zeros_like(self) -> dict:
        return {k: np.zeros_like(v) for k, v in self.arrays.items()}

    def validate(self) -> None:
        expected = self.spec.shapes()
        if set(expected) != set(self.arrays):
            missing = set(expected) - set(self.arrays)
            extra = set(self.arrays) - set(expected)
            raise ValueError(f"parameter names mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for k, shape in expected.items():
            if self.arrays[k].shape != tuple(shape):
                raise ValueError(f"{k}: shape {self.arrays[k].shape} != {shape}")
            if not np.all(np.isfinite(self.arrays[k])):
                raise ValueError(f"{k}: non-finite values")

    def equals(self, other: "ParamStore") -> bool:
        return (set(self.arrays) == set(other.arrays)
                and all(np.array_equal(self.arrays[k], other.arrays[k]) for k in self.arrays))


def init_scale(name: str, shape) -> float:
    """Half-width ``a`` of the U(-a, a) init for a weight matrix.

    ReLU encoder layers use He-uniform ``sqrt(6 / fan_in)``; every other
    matrix uses ``1 / sqrt(fan_in)``. Target std is ``a / sqrt(3)``.
    """
    fan_in = shape[1]
    if name.startswith("enc.W"):
        return float(np.sqrt(6.0 / fan_in))
    return float(1.0 / np.sqrt(fan_in))


def _init_array(name, shape, rng, H=None):
    if len(shape) == 2:
        a = init_scale(name, shape)
        return rng.uniform(-a, a, size=shape)
    b = np.zeros(shape)
    if name == "lstm.b":
        b[H:2 * H] = 1.0
    return b


def init_params(spec: ArchSpec, seed: int, names=None) -> ParamStore:
    """Fresh parameters; each array gets its own stream keyed by (seed, name)."""
    arrays = {}
    for name, shape in spec.shapes().items():
        if names is not None and name not in names:
            continue
        rng = np.random.default_rng(_name_seed(seed, name))
        arrays[name] = _init_array(name, shape, rng, spec.lstm_hidden)
    return ParamStore(spec=spec, arrays=arrays, seed=int(seed), stage="init",
                      random_init=frozenset(arrays))


def _name_seed(seed: int, name: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed)] + list(name.encode()))


# --- checkpoint container ---------------------------------------------------
#
# Byte layout (all integers little-endian):
#   bytes 0..7    magic b"PFCKPT01"
#   bytes 8..15   uint64 header length N
#   next N bytes  UTF-8 JSON header: {"spec", "seed", "stage", "iteration",
#                 "random_init", "extra", "tensors": [{"name", "shape",
#                 "offset", "count"}, ...]}  (keys sorted)
#   payload       concatenated row-major float64 ('<f8') arrays; ``offset``
#                 and ``count`` are in elements from the payload start.

MAGIC = b"PFCKPT01"


def save_checkpoint(params: ParamStore, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tensors, chunks, offset = [], [], 0
    for name in sorted(params.arrays):
        arr = np.ascontiguousarray(params.arrays[name], dtype="<f8")
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": arr.size})
        chunks.append(arr.tobytes(order="C"))
        offset += arr.size
    header = {
        "spec": params.spec.to_dict(),
        "seed": int(params.seed),
        "stage": params.stage,
        "iteration": int(params.iteration),
        "random_init": sorted(params.random_init),
        "extra": params.extra,
        "tensors": tensors,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for c in chunks:
            fh.write(c)
    return path


def load_checkpoint(path) -> ParamStore:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ValueError(f"{path}: not a phaseforge checkpoint")
    (n,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16:16 + n].decode("utf-8"))
    payload = np.frombuffer(data, dtype="<f8", offset=16 + n)
    arrays = {}
    for t in header["tensors"]:
        flat = payload[t["offset"]:t["offset"] + t["count"]]
        arrays[t["name"]] = flat.reshape(t["shape"]).astype(np.float64)
    return ParamStore(spec=ArchSpec.from_dict(header["spec"]), arrays=arrays, seed=header["seed"],
                      stage=header["stage"], iteration=header["iteration"],
                      random_init=frozenset(header["random_init"]), extra=header["extra"])
