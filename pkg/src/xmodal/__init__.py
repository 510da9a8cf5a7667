"""Universal black-box attacks that jointly perturb the image and prompt
inputs of a vision-language model, plus a deterministic toy victim and an
evaluation harness."""

__version__ = "0.1.0"
