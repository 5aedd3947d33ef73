"""musedev: perceptual music-deviation metrics and perception-aware perturbation search."""

from musedev.audio import AudioSignal, FramePlan, Spectrogram, read_wav, write_wav

__version__ = "0.1.0"

__all__ = ["AudioSignal", "FramePlan", "Spectrogram", "read_wav", "write_wav", "__version__"]
