"""Universal graph convolutions and the GCNext dynamic network for motion prediction."""

from .config import RunConfig, parse_config
from .data import MotionDataset, SyntheticConfig, gen_synthetic, mpjpe, zero_velocity
from .estimator import GCNextForecaster, ZeroVelocityForecaster
from .model import GCNext, build_gcnext, build_model, build_refine, build_static
from .unigc import (
    AdjacencyStore,
    GraphConvSpec,
    build_mask,
    conv_factored,
    expand_to_global,
    make_spec,
    param_count,
    seven_kinds,
    unigc_general,
    unigc_masked,
)

__version__ = "0.1.0"
