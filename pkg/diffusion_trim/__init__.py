"""
Trimming estimator for network diffusion models.

Estimates the participation probability p and the transmission probability q
of a diffusion process on village networks from observed participation data,
with a tunable trimming value that bounds the number of latent information
scenarios enumerated per exchange.
"""

from diffusion_trim.model import ParamPoint, SeedVector, OutcomeMatrix, Village, VillageNetwork
from diffusion_trim.scenarios import village_log_likelihood, count_scenarios
from diffusion_trim.estimation import Grid, grid_search, estimate_sequence
from diffusion_trim.pipeline import DiffusionPipeline, RunConfig
