# The three attention variants side by side on a tiny random bundle of
# video, reference, text and product tokens.
#     python demos/02_attention_routing.py
import numpy as np

from guidestage.attention import AttentionWeights, StreamBundle, full_attention, object_attention, reference_attention

rng = np.random.default_rng(0)
t, hw, l, c = 3, 4, 5, 8
vid = rng.standard_normal((t, hw, c))
ref = rng.standard_normal((1, hw, c))
txt = rng.standard_normal((1, l, c))
obj = rng.standard_normal((1, hw, c))
mask = np.zeros((t, hw))
mask[:, :2] = 1.0  # product sits on the first two tokens of each frame
b = StreamBundle(vid, ref, txt, obj, mask)
w = AttentionWeights.init(c, 2, rng)

full = full_attention(b, w)
print("full attention changes every stream:",
      [not np.allclose(a, z) for a, z in ((full.vid, vid), (full.ref, ref), (full.txt, txt))])

# reference attention: the reference tokens never look at the video
shaken = StreamBundle(vid + 5 * rng.standard_normal(vid.shape), ref, txt, obj, mask)
same = np.array_equal(reference_attention(b, w).ref, reference_attention(shaken, w).ref)
print("reference output unchanged when video is perturbed:", same)

# object attention only writes where the mask is on, and never touches obj
out = object_attention(b, w)
delta = np.abs(out.vid - vid).max(axis=2)
print("per-token change (rows are frames):")
print(np.round(delta, 3))
print("obj untouched:", np.array_equal(out.obj, obj))

off = object_attention(StreamBundle(vid, ref, txt, obj, np.zeros((t, hw))), w)
print("zero mask gives back the input exactly:", np.array_equal(off.vid, vid))
