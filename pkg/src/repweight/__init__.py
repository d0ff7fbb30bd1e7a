"""Design-based balancing weights with learned covariate representations.

The package covers the full loop: build weighting tasks from raw data
(ATT, ATE, transportability), learn a covariate representation from the
outcome-free density-ratio loss, solve the kernel-matching quadratic
program over simplex-constrained weights, and evaluate everything against
exact-enumeration oracles on discrete data-generating processes.
"""

from .baselines import (
    LogisticModel,
    PropensityContext,
    entropy_balance,
    fit_logistic,
    ipw_weights,
    pca_representation,
    ps_vector_representation,
    uniform_weights,
)
from .kernels import (
    GramBlock,
    Kernel,
    energy_kernel,
    gaussian_kernel,
    gram,
    kernel_eval,
    linear_kernel,
    median_bandwidth,
    mmd_squared,
)
from .oracle import (
    BiasReport,
    DiscreteDGP,
    balancing_score_error,
    bias_decomposition,
    check_generalized_score,
    confounding_bias,
    corollary_bound,
    joint_bias_metric,
    make_synthetic_dgp,
    projected_ratio,
    true_ratio,
)
from .qp import (
    QPSpec,
    SolverCertificate,
    SolverConfig,
    WeightVector,
    assemble_joint_qp,
    assemble_qp,
    kom_weights,
    solve_qp,
)
from .repnet import (
    RepNet,
    TrainConfig,
    autodml_loss,
    extract_representation,
    forward,
    gradient,
    joint_autodml_loss,
    load_repnet,
    nn_head_weights,
    save_repnet,
    select_representation,
    train,
)
from .tasks import (
    CsvSchema,
    Dataset,
    TaskFamily,
    WeightingTask,
    build_ate_tasks,
    build_att_task,
    build_transport_task,
    load_dataset_csv,
    standardize_family,
)

__version__ = "0.1.0"
