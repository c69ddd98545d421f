"""Desk-scale training with every sensitive linear operation offloaded."""
from .coordinator import Coordinator, fits_budget
from .data import load_csv, make_dataset, save_csv
from .layers import (
    Conv2D,
    Dense,
    MaxPool,
    ModelState,
    ReLU,
    conv2d_naive,
    evaluate,
    im2col,
    init_model,
    mlp,
    plain_gradients,
)
from .loops import (
    TrainConfig,
    calibrate_tau,
    encoded_train,
    gradient_parity,
    paired_metrics,
    plaintext_reference_train,
    sgd_step,
)
from .sealing import GradientStore, SealedGradient, seal_gradient, unseal_gradient, update_aggregation
