"""Horizon-conditioned goal-conditioned behaviour cloning for point-mass navigation."""
__version__ = "0.1.0"

from ._kernels import BACKEND  # noqa: E402
from .dataset import Dataset, Trajectory  # noqa: E402
from .env import EnvSpec, make_spec  # noqa: E402
from .policy import GaussianPolicy, TrainConfig, train  # noqa: E402

__all__ = ["BACKEND", "Dataset", "EnvSpec", "GaussianPolicy", "TrainConfig", "Trajectory",
           "make_spec", "train", "__version__"]
