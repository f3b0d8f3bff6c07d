from .render import render_svg
from .schema import (
    Frame,
    ObjectRecord,
    TruthRecord,
    read_frames,
    read_truth,
    truth_path,
    write_frames,
    write_truth,
)
from .synth import SynthConfig, default_rig, generate

__all__ = [
    "Frame",
    "ObjectRecord",
    "SynthConfig",
    "TruthRecord",
    "default_rig",
    "generate",
    "read_frames",
    "read_truth",
    "render_svg",
    "truth_path",
    "write_frames",
    "write_truth",
]
