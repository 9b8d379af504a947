"""Whitted ray tracer: RGB + first-hit depth + camera-space normal videos."""

from .optics import (TOTAL_INTERNAL_REFLECTION, fresnel_schlick, reflect, refract)
from .primitives import (Box, Cylinder, Primitive, Rectangle, RevolutionSurface,
                         Sphere, build_asset_primitive)
from .render import (Camera, Ray, RenderedFrame, RenderScene, ScenePair,
                     render_frame, render_sequence, trace)

__all__ = [
    "TOTAL_INTERNAL_REFLECTION", "fresnel_schlick", "reflect", "refract",
    "Sphere", "Box", "Cylinder", "RevolutionSurface", "Rectangle", "Primitive",
    "build_asset_primitive", "Camera", "Ray", "RenderedFrame", "RenderScene",
    "ScenePair", "render_frame", "render_sequence", "trace",
]
