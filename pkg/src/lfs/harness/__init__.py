"""Training orchestration, evaluation, video pre-training and file formats."""
from .config import TrainConfig, desk_preset, load_config, parse_config_text
from .framepack import FramePackError, read_pack, write_pack
from .pretrain import pretrain_on_videos, record_packs, record_random_videos
from .train import evaluate, load_policy, train_end_to_end

__all__ = ["FramePackError", "TrainConfig", "desk_preset", "evaluate", "load_config", "load_policy",
           "parse_config_text", "pretrain_on_videos", "read_pack", "record_packs", "record_random_videos",
           "train_end_to_end", "write_pack"]
