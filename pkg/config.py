# config.py

# — Timing settings (virtual milliseconds) —
DEFAULT_DELTA_MS     = 100.0
DEFAULT_GST_MS       = 0.0
HORIZON_FACTOR       = 50          # horizon = HORIZON_FACTOR * delta * n
BACKOFF_FACTOR       = 1.5         # used when timeout schedule is "backoff"
TIMEOUT_SCHEDULES    = ("const", "backoff")

# — Delay model settings —
GAMMA_DEFAULT_SHAPE    = 2.5
GAMMA_DEFAULT_SCALE_MS = 40.0
TRACE_JITTER_MS        = 2.0
# sample region-to-region one-way latency table (ms), symmetric
SAMPLE_LATENCY_TABLE = {
    ("region1", "region1"): 1.0,
    ("region1", "region2"): 82.0,
    ("region1", "region3"): 140.0,
    ("region1", "region4"): 95.0,
    ("region2", "region2"): 1.0,
    ("region2", "region3"): 110.0,
    ("region2", "region4"): 160.0,
    ("region3", "region3"): 1.0,
    ("region3", "region4"): 210.0,
    ("region4", "region4"): 1.0,
}

# — Adversary settings —
BYZANTINE_DROP_FRACTION   = 0.1
BYZANTINE_GARBLE_FRACTION = 0.1
STALE_LAG_FACTOR          = 10     # stale benign sends lag by this many delta
ATTACK_CROSS_DELAY_MS     = 1000.0 # cross-partition delay of the attack scenarios

# — Threshold presets (fraction of n, rounded up) —
H0_PRESETS = {
    "two-thirds":   (2, 3),
    "seven-ninths": (7, 9),
    "five-sixths":  (5, 6),
}
DEFAULT_H0_PRESET            = "two-thirds"
DEFAULT_MEMBERSHIP_H0_PRESET = "seven-ninths"

# — Pool settings —
POOL_SIZE_FACTOR       = 3         # pool size = POOL_SIZE_FACTOR * n when not given
POOL_HONEST_FRACTION   = 2 / 3

# — Deposit settings (coin units, blocks) —
DEFAULT_GAIN_CAP     = 1000
DEFAULT_DEPOSIT_B    = 0.1
DEFAULT_BLOCKDEPTH_W = 28
TX_VALUE_RANGE       = (1, 100)
TXS_PER_BATCH        = 4
GENESIS_COINS        = 100         # per account

# — Signature settings —
SIGNATURE_SCHEMES    = ("keyed-hash", "ed25519")
DEFAULT_SIGNATURE    = "keyed-hash"
SECURITY_BITS        = 256

# — Output settings —
OUT_DIR_ENV          = "BASILIC_OUT_DIR"
DEFAULT_OUT_DIR      = "./out"
CSV_SCHEMA_VERSION   = 2

# — Column headers for run rows —
RUN_CSV_HEADERS = [
    "schema",             # CSV_SCHEMA_VERSION
    "scenario",           # scenario name
    "seed",               # run seed
    "protocol",           # aabc / aarb / basilic / zlb
    "n",                  # committee size
    "t",                  # Byzantine
    "d",                  # deceitful
    "q",                  # benign
    "h0",                 # initial voting threshold
    "attack",             # none / reliable-broadcast-attack / binary-consensus-attack
    "timeouts",           # const / backoff
    "decided",            # honest processes that decided
    "honest",             # honest processes
    "branches",           # distinct honest decisions
    "disagreements",      # branches - 1 (0 when nothing decided)
    "accused",            # distinct accused ids, union over honest views
    "min_accused",        # fewest accused ids held by one honest process
    "exclusions",         # exclusion events over all honest processes
    "messages",           # signed messages sent (certificate contents included)
    "messages_post_gst",  # same, sent at or after GST
    "last_decision_ms",   # virtual time of the last honest decision
    "detect_fd_ms",       # time to detect f_d deceitful (zlb only)
    "membership_changes", # zlb only
    "deceitful_ratio",    # trajectory, ';'-joined (zlb only)
    "deposit_flux",       # slashed minus deposit-funded (zlb only)
    "delay_ratio",        # mean intra / mean cross partition delay
    "horizon_hit",        # 1 if the run stopped at the horizon
    "confirmed",          # honest processes whose decision was alpha-confirmed (zlb: last instance)
    "out_of_model",       # reason the run left the tolerated model, or "-"
    "status",             # ok / violation / error
    "note",               # failure detail or "-"
]

# — Exit codes —
EXIT_OK        = 0
EXIT_FAILED    = 1
EXIT_SCENARIO  = 2
EXIT_VIOLATION = 3
EXIT_USAGE     = 64
