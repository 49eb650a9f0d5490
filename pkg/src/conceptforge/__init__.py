"""conceptforge: parametric concept templates for 3D objects.

Differentiable template instancing, point-cloud fitting, point-wise
correspondence, and procedural region/pose annotation, with a CLI and an
HTTP service on top.
"""

__version__ = "0.1.0"
