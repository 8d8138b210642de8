"""
Configuration file for the pulse accumulator toolkit.
Contains numeric defaults, training schedules, hardware constants and CLI settings.
"""
import os

# Gate families
GATE_CONFIG = {
    "PULSE_SPLIT": (4, 4, 4),      # aperiodic, periodic, positional per head
    "KERNEL_SIZE": 5,              # Causal depthwise convolution taps
    "BASIS_SIZE": 16,              # K sin/cos pairs for positional gates
    "MIN_PERIOD_LOG2": 2.0,        # T_p = 2^(softplus(rho) + 2), i.e. >= 4 frames
    "PERIOD_RANGE": (10.0, 512.0), # Initial period spread in frames
    "INIT_HALF_WIDTH": 4.0,        # Initial aperiodic half-width in frames
    "INIT_SCALE": 0.1,             # Std of seeded predictor weights
    "POSITIONAL_INIT_STD": 0.5,
}

# LPA layer
LPA_CONFIG = {
    "HEADS": 4,
    "EPSILON": 1e-8,       # Division guard for pulse and position denominators
    "TEMPERATURE": 1.0,
}

# Toy transformer encoder
ENCODER_CONFIG = {
    "LAYERS": 4,
    "DIM": 32,
    "HEADS": 2,
    "INPUT_DIM": 8,
    "FFN_MULT": 4,
    "LAYER_NORM_EPS": 1e-5,
}

# Synthetic denoising data
DATA_CONFIG = {
    "SEQ_LEN": 64,
    "BATCH_SIZE": 8,
    "TRAIN_BATCHES": 16,
    "VAL_BATCHES": 4,
    "COMPONENTS": 3,           # Sinusoids per channel
    "NOISE_STD": 0.3,
    "PERIOD_RANGE": (4.0, 48.0),
}

# MSE diagnostic sweep
SWEEP_CONFIG = {
    "LAMBDA1": 0.01,
    "LAMBDA2": 0.001,
    "PRUNE_THRESHOLD": 0.1,    # Relative to max |a|
    "FLOOR": 4,
    "EPOCHS": 2,
    "OVERPROVISION": 3,        # P_sweep = 3 x base pulses per family per head
    "TEMPERATURE": 1.0,
    "LR": 5e-3,
    "HISTOGRAM_BINS": 10,
}

# Temperature curriculum
CURRICULUM_CONFIG = {
    "TAU_START": 3.0,
    "TAU_END": 0.5,
}

# Progressive replacement training
TRAINING_CONFIG = {
    "BASE_LR": 5e-4,
    "WARMUP_FRACTION": 0.1,
    "FFN_LR_SCALE": 0.1,
    "ALIGNMENT_LR_SCALE": 0.5,
    "FINAL_LR_SCALE": 0.2,
    "WEIGHT_DECAY": 0.01,
    "WARMSTART_EPOCHS": 2,
    "TASK_EPOCHS": 8,
    "ALIGNMENT_EPOCHS": 5,
    "FINAL_EPOCHS": 8,
    "TEACHER_STEPS": 300,
    "TEACHER_LR": 3e-3,
    "BUDGET": float("inf"),    # Stop once the validation metric exceeds this
    "GRAD_CLIP": 1.0,
}

# Hard-gate inference
HARDGATE_CONFIG = {
    "ENDPOINT_ROUNDING": "threshold",   # or "nearest"
    "RECOMPUTE_DELTA": True,            # Recompute half-widths under argmax
    "MIN_DUTY": 1e-6,
    "DENSE_MAX_LENGTH": 8192,           # Dense binary matmul at or below this length
    "MARGIN": 0.05,
    "CACHE_SIZE": 256,
}

# Analytic cost model
PERF_CONFIG = {
    "DEFAULT_PROFILE": "m4-pro",
    "PROFILES": {
        "m4-pro": {
            "name": "m4-pro",
            "bandwidth_bps": 273e9,
            "flops": {"f16": 16.7e12, "f32": 8.35e12},
        },
    },
    "SOFTMAX_PASSES": 1.0,
    "ELEMENTWISE_PASSES": 6.0,
    "ACCUMULATION_PASSES": 2.0,   # Accumulate + broadcast both stream the input
    "ACCUMULATION_DTYPE": "f32",
    "MODEL_LAYERS": 12,
    "SCALING_LENGTHS": (500, 1000, 1500, 3000, 4500, 6000),
    "ASYMPTOTIC_LENGTHS": (24000, 48000, 96000),
    "FRAME_RATE": 50,
    # Per-layer microseconds at T=6000, d=768, 12 heads, fp16
    "REFERENCE_US": {
        "attention": {"linear": 1696, "scores": 3311, "softmax": 2110, "mix": 3311},
        "lpa_12": {"linear": 1696, "gate_prediction": 797, "elementwise": 201, "accumulation": 136},
        "lpa_36": {"linear": 1696, "gate_prediction": 807, "elementwise": 201, "accumulation": 142},
    },
}

# Scaling benchmark
BENCH_CONFIG = {
    "SIZES": (256, 512, 1024, 2048, 4096),
    "DIM": 64,
    "HEADS": 4,
    "WARMUP": 3,
    "ITERATIONS": 10,
    "MIN_TICKS": 20,
    "DURATIONS": (10, 30, 60, 120),
}

# Command line
CLI_CONFIG = {
    "OUTPUT_DIR": os.environ.get("PULSE_OUT", "artifacts"),
    "LOG_LEVEL": os.environ.get("PULSE_LOG_LEVEL", "INFO"),
    "LOG_FORMAT": "%(asctime)s - %(name)s - %(levelname)s - %(message)s",
}

# Property suite
VERIFY_CONFIG = {
    "TRIALS": 10,              # Random draws per property
    "ORACLE_TRIALS": 100,      # Brute-force layer evaluations
    "GRADIENT_TRIALS": 20,
    "SATURATED_TRIALS": 100,
    "PERIODIC_DRAWS": 1000,
    "SATURATED_TEMPERATURE": 0.01,
    "SATURATION_GAP": 0.3,     # Minimum logit gap when building saturated instances
}
