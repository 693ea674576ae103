"""Federated conformal prediction over simulated wireless channels.

Centralized and quantized split CP, the quantile-of-quantiles scheme with
its digital TDMA implementation, and WFCP, which estimates the pooled score
histogram over the air with type-based multiple access and tightens the
miscoverage level to absorb the channel noise.
"""

from .channel import (
    ChannelRealization,
    Codebook,
    draw_rayleigh_gains,
    effective_noise_power,
    gamma_worst_case,
    outage_prob,
    power_control,
    renyi2_entropy,
    tbma_transmit,
    tdma_erasures,
)
from .conformal import (
    PredictionBatch,
    PredictionSet,
    augment_plus,
    cp_batch,
    cp_set,
    histogram_of_levels,
    quantile_1_minus_alpha,
    quantile_index,
    quantized_cp_batch,
    quantized_cp_set,
)
from .fedqq import (
    InfeasibleLevels,
    InstanceTooLarge,
    QQLevels,
    dqq_round,
    local_quantile,
    optimize_levels,
    qq_bound,
    qq_bound_ranks,
    qq_threshold,
)
from .harness import ScenarioConfig, ScenarioResult, export, run_scenario, sweep
from .scores import (
    LabeledExample,
    Quantizer,
    ScoreFileError,
    ScoreTable,
    generate_synthetic,
    ingest_csv,
    nc_score,
    quantize,
)
from .wfcp import InfeasibleCorrection, build_r, corrected_alpha, corrected_index, wfcp_predict, wfcp_round

__version__ = "0.1.0"
