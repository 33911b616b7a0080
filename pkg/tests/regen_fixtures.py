"""Regenerate golden fixtures from the current implementation.

Run after an intentional change to seeded initialization or synthesis:

    python3 tests/regen_fixtures.py

Every fixture is a plain .npy file compared bit-for-bit by the tests, so
regenerating on an unchanged tree must produce identical files.
"""

from pathlib import Path

import numpy as np

from feat import attention as att
from feat import embedders as emb
from feat import generator as gen

FIXTURES = Path(__file__).parent / "fixtures"


def regen_map_latent():
    config = gen.GeneratorConfig(seed=7)
    weights = gen.GeneratorWeights.init(config)
    z = np.zeros(config.z_dim)
    z[0] = 1.0
    np.save(FIXTURES / "map_latent_seed7_e1.npy", gen.map_latent(z, weights))


def regen_synthesize():
    config = gen.GeneratorConfig(seed=0)
    weights = gen.GeneratorWeights.init(config)
    z = np.zeros(config.z_dim)
    z[0] = 1.0
    wplus = gen.broadcast(gen.map_latent(z, weights), config.num_layers)
    image, _ = gen.synthesize(wplus, weights)
    np.save(FIXTURES / "synthesize_seed0_e1.npy", image.pixels)


def regen_attention_mask():
    config = gen.GeneratorConfig()
    weights = gen.GeneratorWeights.init(config)
    z = np.random.default_rng(21).standard_normal(config.z_dim)
    wplus = gen.broadcast(gen.map_latent(z, weights), config.num_layers)
    _, stack = gen.synthesize(wplus, weights)
    params = att.AttentionParams.init(att.AttentionConfig(channels=config.channel_schedule, seed=17))
    mask = att.compute_mask(stack, 8, params)
    np.save(FIXTURES / "attention_mask_seed17.npy", mask.values)


def regen_projection_embedding():
    embedder = emb.ProjectionEmbedder(8, 32, seed=9)
    img = np.zeros((3, 32, 32))
    img[0] = 1.0
    np.save(FIXTURES / "projection_embed_red.npy", embedder.embed_image(img))


def main():
    FIXTURES.mkdir(exist_ok=True)
    regen_map_latent()
    regen_synthesize()
    regen_attention_mask()
    regen_projection_embedding()
    for path in sorted(FIXTURES.glob("*.npy")):
        print(f"wrote {path.name}")


if __name__ == "__main__":
    main()
