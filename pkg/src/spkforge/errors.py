"""Exception types shared across the toolkit."""


class SpkforgeError(Exception):
    """Base class for all toolkit errors."""


class AudioError(SpkforgeError):
    pass


class UnsupportedChannelCountError(AudioError):
    """Input file is not mono."""


class UnsupportedBitDepthError(AudioError):
    """Input file is not 16-bit PCM."""


class UnsupportedEncodingError(AudioError):
    """Input file is not linear PCM."""


class PerturbFactorError(AudioError):
    """Speed factor outside the supported range or not in the label rule."""


class SpeakerIdError(AudioError):
    """Speaker id not usable with the composite relabeling scheme."""


class EmptyWaveformError(AudioError):
    pass


class FeatureError(SpkforgeError):
    pass


class GraphError(SpkforgeError):
    """Autodiff misuse: non-scalar backward, detached parameter, shape mismatch."""


class ConfigError(SpkforgeError):
    pass


class ManifestError(SpkforgeError):
    pass


class TrainingError(SpkforgeError):
    pass


class DivergenceError(TrainingError):
    """Loss became non-finite; carries the offending step."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"training diverged (non-finite loss) at step {step}")


class ScoringError(SpkforgeError):
    pass


class DegenerateCohortError(ScoringError):
    """Top-N cohort scores have (near-)zero variance."""


class MetricError(SpkforgeError):
    pass


class TrialError(SpkforgeError):
    pass


class PackagingError(SpkforgeError):
    pass


class RegistryError(SpkforgeError):
    pass


class StageError(SpkforgeError):
    """A pipeline stage failed; carries the stage number for the exit code."""

    def __init__(self, stage, message):
        self.stage = stage
        super().__init__(f"stage {stage}: {message}")


class PipelineError(SpkforgeError):
    """Run-level failure outside any stage (e.g. experiment dir locked)."""
