"""Flash-flood susceptibility modelling with attention-augmented CNNs on raster patches."""
__version__ = "0.1.0"

from .backbones import BackboneSpec, build  # noqa: E402
from .cbam import CBAM, cbam_param_count  # noqa: E402
from .data import FeatureStack, PatchDataset, load_stack, prepare_dataset, synth_generate  # noqa: E402
from .errors import FfsmError  # noqa: E402
from .train import TrainConfig, evaluate, predict  # noqa: E402

__all__ = ["BackboneSpec", "build", "CBAM", "cbam_param_count", "FeatureStack", "PatchDataset",
           "load_stack", "prepare_dataset", "synth_generate", "FfsmError", "TrainConfig",
           "evaluate", "predict", "__version__"]
