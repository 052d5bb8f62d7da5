"""Desk-scale simulator for federated training over a fading uplink.

Second-order client updates (EMA-smoothed gradients plus a periodic
sampled-label diagonal curvature estimate) are aggregated either
analogically over a simulated multiple-access channel, digitally at
Shannon-rate cost, or over an ideal link, with first-order FedAvg and
FedProx baselines for comparison.
"""

from .channel import (
    EnergyLedger,
    OtaConfig,
    client_scale_factor,
    digital_rate,
    digital_slots,
    eligible_indices,
    energy_accumulate,
    global_scale_factor,
    ota_aggregate_slot,
    ota_slots_for_round,
    sample_channel_matrix,
)
from .experiment import (
    ExperimentConfig,
    MetricsRow,
    gen_synthetic,
    load_config,
    load_mnist_idx,
    read_metrics_csv,
    run_experiment,
    serialize_config,
    write_metrics_csv,
)
from .federation import (
    ClientState,
    Dataset,
    FederationState,
    RoundConfig,
    RoundReport,
    client_local_step,
    evaluate,
    partition_iid,
    partition_label_limited,
    run_round,
)
from .model import (
    Batch,
    MlpArch,
    cross_entropy,
    forward,
    gnb_diag_hessian,
    init_params,
    loss_and_grad,
    sample_labels,
    softmax,
    split_layers,
)
from .optimizer import (
    EmaState,
    SophiaConfig,
    apply_step,
    clip_elementwise,
    ema_hessian,
    ema_moment,
    fedprox_grad,
    sophia_direction,
)

__version__ = "0.1.0"
