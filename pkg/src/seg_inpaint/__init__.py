"""Two-stage segmentation-guided image inpainting.

A label-completion network fills the missing region of a semantic label map,
and a label-conditioned synthesis network renders the image inside the hole,
enabling interactive multi-modal editing of the completion.
"""

__version__ = "0.1.0"
