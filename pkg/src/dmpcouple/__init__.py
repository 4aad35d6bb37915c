"""Dynamic movement primitives with learned neural-network coupling terms
for reactive obstacle avoidance."""

from .dmp import Dmp, DmpParams, UnrollResult, fit_forcing_weights, unroll
from .frame import LocalFrame, build_frame
from .obstacles import ObstacleSetting, make_setting, signed_distance
from .features import extract_features
from .guards import GuardConfig, apply_guards
from .network import CouplingModel, TrainConfig, forward, nmse, train_lm
from .coupling import CouplingDataset, assemble, compute_targets
from .rollout import fit_baseline

__version__ = "0.1.0"
