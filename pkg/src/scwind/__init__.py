"""Windowed decoding of spatially coupled LDPC codes with adaptive window shifts."""

from .bp import LLR_MAX, MessageStore, check_node, hard_decision, soft_ber, syndrome_ok, variable_node
from .channel import LlrFrame, awgn_llrs, channel_ber, manipulate_block, noise_variance
from .code import (CodeError, CodeSpec, CoupledCode, GirthWarning, SparseBlock, assemble_window,
                   build_protograph, lift, read_alist, validate, write_alist)
from .decoder import (ComplexityLedger, DecodeResult, DecoderConfig, GeometryError, StallRecord,
                      WindowState, average_complexity, decode, decode_aid, decode_fixed, decode_wsd,
                      decode_wtd, detect_stall, estimate_post_ber, find_stall_position)
from .harness import (ExperimentConfig, SchemeRun, StatsReport, build_testset, manipulation_experiment,
                      read_testset, replay_testset, report, run_ber_sweep, write_testset)

__all__ = [
    "LLR_MAX", "MessageStore", "check_node", "hard_decision", "soft_ber", "syndrome_ok", "variable_node",
    "LlrFrame", "awgn_llrs", "channel_ber", "manipulate_block", "noise_variance",
    "CodeError", "CodeSpec", "CoupledCode", "GirthWarning", "SparseBlock", "assemble_window",
    "build_protograph", "lift", "read_alist", "validate", "write_alist",
    "ComplexityLedger", "DecodeResult", "DecoderConfig", "GeometryError", "StallRecord", "WindowState",
    "average_complexity", "decode", "decode_aid", "decode_fixed", "decode_wsd", "decode_wtd",
    "detect_stall", "estimate_post_ber", "find_stall_position",
    "ExperimentConfig", "SchemeRun", "StatsReport", "build_testset", "manipulation_experiment",
    "read_testset", "replay_testset", "report", "run_ber_sweep", "write_testset",
]
