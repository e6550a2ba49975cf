"""Spectro-temporal receptive field (STRF) networks for sound event detection, in numpy."""
from .fdy import FdyConv2d
from .frontend import MelConfig, MelSpectrogram, Waveform, load_wav, melspectrogram
from .metrics import Event, F1Report, f1_mo
from .models import (
    ARCHITECTURES, ModelConfig, TrainConfig, build_model, load_checkpoint, param_count,
    save_checkpoint, train,
)
from .strf import (
    KernelAxes, ScaleRateParam, StrfConv, build_bank, build_strf, modulation_peak, ripple_stimulus,
)

__version__ = "0.1.0"
