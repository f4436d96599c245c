from __future__ import annotations

# Shared shape constants and binary container identifiers

PHRASE_STEPS = 64  # 4 bars of 4/4 at 16th-note resolution
PITCH_COUNT = 84
STEPS_PER_QUARTER = 4
PHRASE_CELLS = PHRASE_STEPS * PITCH_COUNT  # 5376

DEFAULT_PITCH_LOW = 24  # C1
PERCUSSION_CHANNEL = 9

SMF_HEADER_MAGIC = b"MThd"
SMF_TRACK_MAGIC = b"MTrk"

DATASET_MAGIC = b"PRDS"
DATASET_VERSION = 1
DATASET_SIDECAR_SUFFIX = ".meta.json"

CHECKPOINT_MAGIC = b"MSTC"
CHECKPOINT_VERSION = 1

NETWORK_NAMES = ("g_ab", "g_ba", "d_a", "d_b", "d_a_m", "d_b_m")
GENERATOR_NAMES = ("g_ab", "g_ba")
DISCRIMINATOR_NAMES = ("d_a", "d_b", "d_a_m", "d_b_m")

LOSS_COMPONENTS_D = ("d_a", "d_b", "d_a_m", "d_b_m", "d_total")
LOSS_COMPONENTS_G = ("g_adv_ab", "g_adv_ba", "cycle_a", "cycle_b", "g_mixed_ab", "g_mixed_ba", "g_total")
