"""
Event Anonymization - Command Name Constants

Purpose:
    Centralized definitions for all CLI command names and the checkpoint and
    report file names they exchange. This keeps registration, dispatch and
    tests consistent.

Constants by stage:

Data:
    - CMD_GEN_DATASET
    - CMD_SIMULATE
    - CMD_ENCRYPT_BASELINE
    - CMD_RENDER

Training:
    - CMD_TRAIN_ATTACKER
    - CMD_TRAIN_JOINT

Evaluation & Attacks:
    - CMD_EVAL
    - CMD_INVERT_ATTACK
    - CMD_ABLATE

Diagnostics:
    - CMD_GRADCHECK
"""

CMD_GEN_DATASET = "gen-dataset"
CMD_SIMULATE = "simulate"
CMD_TRAIN_ATTACKER = "train-attacker"
CMD_TRAIN_JOINT = "train-joint"
CMD_ENCRYPT_BASELINE = "encrypt-baseline"
CMD_EVAL = "eval"
CMD_INVERT_ATTACK = "invert-attack"
CMD_GRADCHECK = "gradcheck"
CMD_ABLATE = "ablate"
CMD_RENDER = "render"

ALL_COMMANDS = [
    CMD_GEN_DATASET,
    CMD_SIMULATE,
    CMD_TRAIN_ATTACKER,
    CMD_TRAIN_JOINT,
    CMD_ENCRYPT_BASELINE,
    CMD_EVAL,
    CMD_INVERT_ATTACK,
    CMD_GRADCHECK,
    CMD_ABLATE,
    CMD_RENDER,
]

# Checkpoint files inside the checkpoint directory
ATTACKER_CHECKPOINT = "attacker.eann"
ANONYMIZER_CHECKPOINT = "anonymizer.eann"
REID_CHECKPOINT = "reid.eann"
REID_RAW_CHECKPOINT = "reid_raw.eann"
INVERTER_CHECKPOINT = "inverter.eann"
