from .config import TrainConfig, PAPER_STAGES, TOY_STAGES, STAGES, update_config
from .optim import SGD, Adam, GradAccumulator, sgd_update, adam_update, lr_multipliers, make_optimizer
from .bptt import SequenceData, make_sequence, full_bptt_grads, truncated_bptt_grads, sequence_loss
from .transfer import transfer_weights, IncompatibleTransfer, TRANSFERS
from .pipelines import (
    TrainLog, base_model, labeled_frames, train_phase_encoder, train_progress_encoder, train_endon2n,
    train_endolstm, pretrain_rsd, pretrain_tempcon, tempcon_accuracy, validation_accuracy,
    extract_features,
)
from .gradcheck import sequence_gradcheck, toy_problem
