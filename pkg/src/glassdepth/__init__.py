"""glassdepth: video depth and normal estimation for transparent desk scenes.

Pipeline: procedural scene synthesis -> physically based rendering of
RGB/depth/normal sequences -> flow-matching fine-tuning of a compact
diffusion transformer with LoRA adapters -> overlap-stitched inference ->
scale/shift-aligned evaluation.
"""

__version__ = "0.1.0"
