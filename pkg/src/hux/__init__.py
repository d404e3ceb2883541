"""Deterministic multimodal context pipeline for always-on assistants.

Frames come in with detector annotations, events of interest are pulled out
and captioned under a latency budget, gaze picks a region of interest, and a
prompt is assembled for the language backend when the user speaks.
"""

__version__ = "0.1.0"
