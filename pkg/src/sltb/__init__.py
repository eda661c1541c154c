"""Scale-location-truncated beta (SLTB) toolkit.

Bounded-response modeling that keeps exact 0/1 observations in the
likelihood: the SLTB distribution, maximum-likelihood regression with
Wald inference, a Monte Carlo study harness, and hierarchical Bayesian
samplers (linear random-intercept and nonlinear delay-discounting),
plus a batch CLI (``sltb --help``).
"""

from .bayes_hier_linear import (
    HIER_SPEC,
    AlcoholFixture,
    ChainState,
    HierChainResult,
    HierLinearModel,
    PosteriorSummary,
    Tuning,
    build_hier_model,
    gen_alcohol_fixture,
    hier_linear_loglik,
    initial_state,
    mh_step,
    posterior_predictive_mse,
    run_chain,
)
from .bayes_hier_nonlinear import (
    DEFAULT_DELAYS,
    HYPER,
    DiscountData,
    DiscountSample,
    DiscountTruth,
    HyperPriors,
    NonlinearChainState,
    NonlinearResult,
    discount_data_from_table,
    discount_mean,
    gen_discount_data,
    gibbs_mu,
    gibbs_sigma2,
    ig_shape_rate,
    initialize_chain,
    mh_update_lnphi_sltb,
    mh_update_psi_normal,
    mh_update_psi_sltb,
    normal_conditional,
    normal_hier_sample,
    sample_inverse_gamma,
    sltb_hier_sample,
)
from .data import TabularDataset, read_csv, write_csv
from .distributions import (
    DEFAULT_L,
    DEFAULT_S,
    BetaMuPhi,
    SltbParams,
    SltbSample,
    beta_logpdf,
    sl_pdf,
    sltb_cdf,
    sltb_logpdf,
    sltb_mean,
    sltb_normalizer,
    sltb_pdf,
    sltb_quantile,
    sltb_sample,
    sltb_var,
    tune_scale_location,
)
from .errors import (
    BoundaryError,
    ConvergenceError,
    DomainError,
    NumericalError,
    SltbError,
    ValidationError,
)
from .kernel import (
    QuadratureRule,
    Rng,
    composite_rule,
    gauss_legendre,
    integrate,
    inv_reg_inc_beta,
    lgamma,
    numeric_hessian,
    reg_inc_beta,
    sample_beta,
    sample_gamma,
    sample_normal,
    sample_uniform,
    std_normal_cdf,
)
from .regression import (
    FitResult,
    RegressionSpec,
    build_design,
    fit_mle,
    mse,
    mse_report,
    predict_mean,
    residuals,
    response_vector,
)
from .simulation import (
    STUDY_SPEC,
    McStudyReport,
    SimConfig,
    gen_dataset,
    records_table,
    run_study,
)

__version__ = "0.1.0"
