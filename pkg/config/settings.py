"""
Configuration settings for the CV-QKD polarization/phase tracking simulator
Defaults for every tunable, plus the desk and paper run profiles
"""
import math
import os

from dotenv import load_dotenv

load_dotenv()

# ============================================
# TRANSMITTER
# ============================================

SYMBOL_RATE = 20e6             # Baud
SAMPLE_RATE = 1e9              # Samples/s (AWG/DSO rate)
RRC_ROLLOFF = 0.2
RRC_SPAN = 64                  # symbols
SIGNAL_CENTER_FREQ = 100e6     # Hz
PILOT_FREQ = 180e6             # Hz
PILOT_TO_SIGNAL_DB = 20.0      # pilot power over shaped-signal power
MODULATION_VARIANCE = 1.65     # SNU

# ============================================
# CHANNEL & RECEIVER FRONT-END
# ============================================

LASER_LINEWIDTH = 100.0                     # Hz, per laser
LINEWIDTH_TOTAL = 2 * LASER_LINEWIDTH       # TX laser + LLO
LOSS_DB = 5.5
FREQ_OFFSET = 0.0                           # Hz
TRUSTED_LOSS_TAU = 0.53
ELECTRONIC_NOISE = 0.01                     # SNU
EXCESS_NOISE = 0.0                          # SNU, channel input referred

# ============================================
# RECEIVER DSP
# ============================================

PILOT_BANDWIDTH = 2e6              # Hz, two-sided width kept around the pilot
PILOT_SEARCH_BW = 1e6              # Hz, +/- window for the pilot peak search
NORMALIZE_BANDWIDTH = 300e6        # Hz, per-polarization power balancing band
STOPBAND_DB = 80.0                 # FIR stopband attenuation
CALIBRATION_SAMPLES = 2 ** 18      # length of shot/electronic calibration records
SPECTRUM_SEGMENT = 4096            # Welch segment length for spectra.csv
PEAK_THRESHOLD_DB = 10.0           # pilot must clear the noise floor by this much

# ============================================
# ESTIMATORS
# ============================================

UKF_Q_AB = 1e-9
UKF_Q_PHI = 1e-5
UKF_ALPHA = 1e-2
UKF_BETA = 2.0
UKF_KAPPA = 0.0
UKF_JITTER = 1e-12
UKF_DECIMATION = 1

CMA_MU = 0.01
CMA_SMOOTHING_FRACTION = 0.1   # tail of each frame averaged into the applied matrix
CMA_DIVERGENCE_NORM = 1e6

# ============================================
# SECURITY
# ============================================

RECONCILIATION_EFFICIENCY = 0.95
RECEIVER_MODEL = "trusted"

# ============================================
# EXPERIMENT
# ============================================

N_MEASUREMENTS = 18
SYMBOLS_PER_MEASUREMENT = 490_000
FRAME_LENGTH = 10_000
MASTER_SEED = 20230601
HISTOGRAM_BINS = 30
CSV_FLOAT_FORMAT = "%.9g"

DEFAULT_OUTPUT_DIR = os.getenv("CVQKD_OUTPUT_DIR", "results")
DEFAULT_WORKERS = int(os.getenv("CVQKD_WORKERS", 1))

# Reduced profile for laptops and CI. 120 MS/s keeps an integer 6 samples/symbol.
DESK_PROFILE = {
    "tx": {
        "sample_rate": 120e6,
        "signal_center_freq": 25e6,
        "pilot_freq": 48e6,
    },
    "dynamics": {
        "theta_model": {"kind": "sinusoidal", "amplitude": 0.5, "rate": 1.0},
    },
    "dsp": {"normalize_bandwidth": 60e6},
    "n_measurements": 5,
}

# Full-rate profile matching the measurement campaign
PAPER_PROFILE = {
    "dynamics": {
        "theta_model": {"kind": "sinusoidal", "amplitude": 0.5, "rate": 1.0},
    },
    "ukf": {"q_phi": 2 * math.pi * LINEWIDTH_TOTAL / SAMPLE_RATE},
}

PROFILES = {"desk": DESK_PROFILE, "paper": PAPER_PROFILE}
DEFAULT_PROFILE = "desk"

# Sweepable parameters and the config field each one drives
SWEEP_PARAMETERS = {
    "v_mod": "tx.modulation_variance",
    "loss_db": "dynamics.loss_db",
    "linewidth": "dynamics.linewidth_total",
    "mu": "cma.mu",
    "q_phi": "ukf.q_phi",
    "theta_rate": "dynamics.theta_model.rate",
}
SWEEP_MEASUREMENTS = 2

# ============================================
# LOGGING
# ============================================

LOG_LEVEL = os.getenv("CVQKD_LOG_LEVEL", "INFO")
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

# ============================================
# SYSTEM METADATA
# ============================================

SYSTEM_VERSION = "1.0.0"
