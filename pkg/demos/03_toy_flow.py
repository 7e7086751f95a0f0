# Train the desk-scale toy model for a few dozen steps, then sample two
# chained clips. Takes about half a minute.
#     python demos/03_toy_flow.py
import numpy as np

from guidestage import toy
from guidestage.flow import SamplerConfig, chain_clips, concat_clips, euler_sample

# a straight-line field carries noise to data in a single Euler step
x0, x1 = np.zeros(3), np.array([1.0, -2.0, 0.5])
print("one step, constant field:", euler_sample(lambda x, t, c: x1 - x0, x0, SamplerConfig(steps=1)))

cfg = toy.ToyConfig(c=16, heads=2, n_train=6)
data = toy.make_dataset(cfg, seed=0)
print("latent per clip:", data[0].x1.shape, " guidance frames:", data[0].cond.guidance.shape)

result = toy.train(cfg, steps=40, seed=0, data=data, eval_every=10)
for step, loss in result.eval_losses:
    print(f"step {step:3d}  eval loss {loss:.4f}")

held = toy.held_out_sample(cfg)
err = toy.masked_reconstruction_error(result.params, cfg, held, seed=0)
print(f"product-region reconstruction error on a held-out clip: {err:.4f}")

# Clips are sampled one after another. The last latent frame of a clip is
# pinned as the first frame of the next one.
model = toy.ToyModel(result.params, cfg, held.cond)
clips = chain_clips(model, held.cond.guidance.shape[0], SamplerConfig(steps=5, clip_frames=4, seed=1), 2)
print("boundary frames identical:", np.array_equal(clips[0][-1], clips[1][0]))
print("joined video latent:", concat_clips(clips).shape)
