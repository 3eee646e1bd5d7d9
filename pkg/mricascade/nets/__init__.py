from .archive import ArchiveError, read_archive, write_archive
from .configs import (ClassifierConfig, DeepSegNetConfig, DenseConfig, NetConfig,
                      NetError, RecurrentConfig, ResNetConfig, SegmenterConfig,
                      UNetConfig, fit_segmenter_config, fit_valid_input,
                      is_segmenter, parse_net_config, valid_shape)
from .functional import (ForwardCache, MissingCacheError, backward, build_model,
                         deepsegnet_forward, forward_cached, init_params,
                         recurrent_forward, resnet_forward, run_forward, segment,
                         segment_forward_cached, unet_forward)
from .params import ParameterStore

__all__ = [
    "ArchiveError", "ClassifierConfig", "DeepSegNetConfig", "DenseConfig",
    "ForwardCache", "MissingCacheError", "NetConfig", "NetError",
    "ParameterStore", "RecurrentConfig", "ResNetConfig", "SegmenterConfig",
    "UNetConfig", "backward", "build_model", "deepsegnet_forward",
    "fit_segmenter_config", "fit_valid_input", "forward_cached", "init_params",
    "is_segmenter", "parse_net_config", "read_archive", "recurrent_forward",
    "resnet_forward", "run_forward", "segment", "segment_forward_cached",
    "unet_forward", "valid_shape", "write_archive"
]
