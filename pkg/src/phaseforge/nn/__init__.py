from .params import (
    ArchSpec, ParamStore, init_params, save_checkpoint, load_checkpoint,
    PHASE_ENCODER, ENDON2N_VANILLA, ENDON2N_UPDATED, PROGRESS_ENCODER, RSD_PROGRESS, TEMPCON,
    VARIANTS, SEQUENCE_VARIANTS,
)
from .layers import (
    LstmState, sigmoid, softmax, log_softmax, smooth_l1, encoder_forward, lstm_step,
    phase_head, progress_head, rsd_head,
)
from .model import (
    phase_sequence_loss, phase_loss_grad, rsd_progress_loss, rsd_progress_loss_grad,
    forward_subsequence, backward_subsequence, frame_forward, frame_backward,
    frame_phase_loss_grad, frame_progress_loss_grad,
    tempcon_forward, tempcon_backward, tempcon_loss_grad,
)
from .gradcheck import finite_diff_grads, max_relative_error
