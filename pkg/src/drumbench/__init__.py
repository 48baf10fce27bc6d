"""Desk-scale workbench for symbolic-to-audio drum rendering.

Drum grids are diffused in a PCA-compressed RVQ codec latent space; the
package covers dataset synthesis, cache building, training, sampling, the
paired metric suite with resampling statistics, and an HTTP render service.
"""

__version__ = "0.1.0"
