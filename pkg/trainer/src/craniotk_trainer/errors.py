class TrainerError(Exception):
    pass


class ShapeMismatchError(TrainerError):
    """Prediction and target tensors disagree on shape."""


class ChannelMismatchError(TrainerError):
    """Input channel count does not match the model variant."""
