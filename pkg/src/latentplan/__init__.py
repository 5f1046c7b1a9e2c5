"""latentplan: low-dimensional latent motion models with planning by MAP
trajectory inference over a particle trellis."""

__version__ = "0.1.0"
