"""Minimum-description-length probing of fixed vector representations.

Two coders measure how many bits it takes to transmit labels given
features: a variational (two-part) code over a sparsity-inducing Bayesian
probe, and an online (prequential) code built from probes trained on
growing prefixes. Baselines, synthetic tasks, and a CLI round things out.
"""

__version__ = "0.1.0"

from .codes import (  # noqa: E402,F401
    DEFAULT_FRACTIONS,
    OnlineReport,
    Schedule,
    compression_ratio,
    decompose_online,
    make_schedule,
    online_code,
    prior_codelength,
    uniform_codelength,
)
from .datasets import (  # noqa: E402,F401
    Dataset,
    GaussianTaskSpec,
    LinearTaskSpec,
    gen_gaussian_task,
    gen_linear_task,
    make_control_labels,
    random_features,
    randomize_labels,
    read_dataset,
    shuffle_split,
    with_control_labels,
    write_dataset,
)
from .numerics import MlpConfig, MlpParams  # noqa: E402,F401
from .probe_train import EvalResult, TrainConfig, TrainedProbe, evaluate, train_probe  # noqa: E402,F401
from .varcode import (  # noqa: E402,F401
    VarProbe,
    VarReport,
    kl_bits,
    prune_architecture,
    train_variational,
    var_forward,
    variational_codelength,
)
