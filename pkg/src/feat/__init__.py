"""Text-guided latent editing for a miniature style-based generator.

The package wires a frozen convolutional generator to a learned latent
mapper and a learned spatial attention module. Edits happen in latent
space; the attention mask decides, per spatial location of one synthesis
layer, whether the edited or the original features continue through the
network.
"""

__version__ = "0.1.0"

from ._kernels import backend_name

__all__ = ["backend_name", "__version__"]
