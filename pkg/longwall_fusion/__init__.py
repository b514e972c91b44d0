"""Simulated LiDAR-camera monitoring of a longwall face."""

__version__ = "0.1.0"

from .config import SystemConfig, load_config
from .exception import FusionException, StorageException, WireException
from .pipeline import FusedFrame, run_pipeline
from .storage import ArtifactStore, open_store
from .wire import decode_frame, encode_frame

__all__ = [
    "SystemConfig",
    "load_config",
    "FusedFrame",
    "run_pipeline",
    "encode_frame",
    "decode_frame",
    "ArtifactStore",
    "open_store",
    "FusionException",
    "StorageException",
    "WireException",
]
