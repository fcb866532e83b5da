"""lacklab: a desk-scale laboratory for the LACK VoIP covert channel.

Models RTP voice streams, embeds and extracts steganograms through
intentionally over-delayed packets, paces the hidden-data insertion rate
against call-duration statistics and voice-quality budgets, and evaluates
detectability under passive and active wardens.
"""

from .channel import ChannelConfig, transmit, transmit_many
from .durations import (
    PiecewiseModel,
    SampleModel,
    WeibullModel,
    WEIBULL_CV_SWEEP,
    approx_conditional_mean_min,
    conditional_mean_bounds,
    conditional_mean_by_quadrature,
    empirical_voip_model,
    exponential,
    fit_weibull,
    residual_mean,
    residual_mean_from_moments,
    sweep_models,
)
from .endpoint import (
    LackSenderConfig,
    Steganogram,
    chunk_message,
    embed,
    negotiate_delay,
    reassemble,
    receive_aware,
    receive_unaware,
    sender_transmit_time,
)
from .harness import CallMetrics, ExperimentConfig, run_call, run_experiment
from .quality import (
    CodecProfile,
    MosParams,
    SKYPE_MOS_PARAMS,
    builtin_codecs,
    codec_profile,
    ir_to_p_lack,
    loss_budget,
    max_p_lack,
    mos,
    mos_timeline,
    p_lack_to_ir,
)
from .rtp import JitterBufferConfig, PacketRecord, buffer_decide, generate_stream
from .scheduler import (
    RateSchedule,
    SchedulerState,
    advance,
    build_schedule,
    cap_from_quality,
    initial_rate,
    rate_at,
    rate_reduction,
    select_for_embedding,
)
from .warden import (
    ActiveWarden,
    ActiveWardenConfig,
    duration_fit_test,
    passive_loss_scan,
)

__version__ = "0.1.0"
