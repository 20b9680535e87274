"""Sequential change detection for unnormalized pre/post-change models.

Core pieces: model pairs with geometric-bridge samplers (:mod:`.models`),
unbiased bridge-sampling oracles for log(Z0/Z1) and the biased baselines
(:mod:`.partition`), the detector state machines (:mod:`.detect`), gamma
calibration (:mod:`.calibrate`), and the Monte Carlo ARL/CADD harness
(:mod:`.harness`).  The ``ticusum`` CLI drives the whole pipeline.
"""

__version__ = "0.1.0"

from .calibrate import (
    CalibrationResult,
    arl_lower_bound,
    calibrate_pair,
    check_gamma_condition,
    estimate_kl,
    gamma_zero,
    predicted_cadd,
    required_i,
    scusum_delta,
)
from .detect import (
    CusumDetector,
    DetectorState,
    LpaConfig,
    LpaDetector,
    ScusumDetector,
    StoppingReport,
    cusum_step,
    initial_state,
    lpa_step,
    run_detector,
    scusum_step,
)
from .errors import (
    CalibrationError,
    CapabilityError,
    ConfigError,
    DegenerateEstimateError,
    DegenerateWeightsError,
    DomainError,
    EstimationError,
    TicusumError,
)
from .harness import (
    DetectorSpec,
    StreamSpec,
    SweepRow,
    estimate_arl,
    estimate_cadd,
    generate_stream,
    sweep,
    write_sweep_csv,
)
from .models import (
    BoltzmannPair,
    Capabilities,
    CustomPair,
    GaussianPair,
    ModelPair,
    boltzmann,
    get_pair,
    mvn10,
    with_metropolis_path,
)
from .partition import (
    ConstantOracle,
    ExactPathOracle,
    ImportanceOracle,
    OracleBatch,
    OracleDraw,
    VarianceReport,
    estimate_oracle_variance,
    is_normalizer_check,
    make_oracle,
    naive_estimator_1,
    naive_estimator_2,
    oracle_batch,
    theorem4_bound,
    ti_single_draw,
    ti_single_draw_is,
)
