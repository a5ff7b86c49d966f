"""
Error hierarchy shared by the simulator, the DSP chain and the engine.
The engine catches CvqkdError per measurement; anything else is fatal.
"""


class CvqkdError(Exception):
    """Base class for every error raised by this package"""


class ConfigError(CvqkdError, ValueError):
    """Invalid or unknown configuration field. Message starts with the dotted path."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class WaveformError(CvqkdError, ValueError):
    """Bad transmitter parameters or malformed waveform"""


class ChannelError(CvqkdError, ValueError):
    """Channel trace and waveform disagree"""


class DspError(CvqkdError):
    """Receiver DSP failure"""


class CalibrationError(DspError, ValueError):
    """Shot/electronic noise records do not form a valid calibration"""


class PilotNotFoundError(DspError):
    """No pilot tone above the noise floor inside the search window"""


class BandOverlapError(DspError, ValueError):
    """Pilot and quantum bands overlap"""


class EstimatorError(CvqkdError):
    """Estimator failure, optionally at a given sample index"""

    def __init__(self, message, sample_index=None):
        self.sample_index = sample_index
        if sample_index is not None:
            message = f"{message} (sample {sample_index})"
        super().__init__(message)


class CovarianceError(EstimatorError):
    """Covariance lost positive definiteness or innovation covariance is singular"""


class DegenerateEstimateError(EstimatorError):
    """Rotation estimate too small to normalize"""


class CmaDivergenceError(EstimatorError):
    """CMA equalizer norm blew up; step size too large"""


class SecurityError(CvqkdError):
    """Parameter estimation or key-rate failure"""


class InvalidEstimateError(SecurityError, ValueError):
    """Estimate leads to an unphysical covariance matrix"""


class OutputError(CvqkdError):
    """Run output file missing, empty or unparsable"""
