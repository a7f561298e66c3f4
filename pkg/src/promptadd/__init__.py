"""promptadd: test-time domain adaptation of a waveform deepfake detector
by prompt tuning, built on a small self-contained autodiff core."""

__version__ = "0.1.0"
