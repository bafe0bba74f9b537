"""Target vs. non-target fixation classification from gaze and EEG."""

__version__ = "0.1.0"
