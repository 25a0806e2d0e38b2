from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import flip_sign, grad_check
from .layers import (
    conv2d_backward,
    conv2d_forward,
    dense_backward,
    dense_forward,
    maxpool2_backward,
    maxpool2_forward,
    relu_backward,
    relu_forward,
    softmax,
    wce_loss,
)
from .model import (
    PARAM_NAMES,
    AdamState,
    ModelConfig,
    ModelState,
    adam_step,
    backward,
    forward,
    init_params,
    layer_shapes,
    loss_and_grads,
    predict,
)
