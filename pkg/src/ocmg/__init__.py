"""Object-centric motion generation at desk scale: segment/mask prediction,
Chamfer-family losses, segment concatenation, and paint-coverage evaluation."""

__version__ = "0.1.0"
