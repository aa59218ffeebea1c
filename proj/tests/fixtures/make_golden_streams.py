"""Regenerates golden_streams.csv with numpy's Philox4x64-10 as an independent reference.

numpy advances the counter before producing a block, so block b comes from counter b - 1.
"""
import numpy as np

M64 = (1 << 64) - 1
M256 = (1 << 256) - 1
SALT = 0x6A09E667F3BCC908
DERIVE = 0x4445524956
SPLIT = 0x53504C4954


def words_to_int(words):
    return sum(int(w) << (64 * i) for i, w in enumerate(words))


def block(ctr, key):
    bg = np.random.Philox(counter=(words_to_int(ctr) - 1) & M256, key=words_to_int(key))
    return [int(v) for v in bg.random_raw(4)]


def stream(key, n):
    bg = np.random.Philox(counter=M256, key=words_to_int(key))
    return [int(v) for v in bg.random_raw(n)]


def derive(seed, idx, role):
    return block([idx, role, 0, DERIVE], [seed, SALT])[:2]


def substream(key, index, tag):
    return block([index, tag, 0, SPLIT], key)[:2]


rows = []
for seed in (0, 42, (1 << 63) + 5):
    for idx in (0, 1, 12345):
        for role in (0, 1, 2):
            key = derive(seed, idx, role)
            rows.append((seed, idx, role, "root", stream(key, 8)))
            rows.append((seed, idx, role, "sub3.1", stream(substream(key, 3, 1), 4)))

with open("golden_streams.csv", "w") as f:
    f.write("seed,index,role,stream,u0,u1,u2,u3,u4,u5,u6,u7\n")
    for seed, idx, role, name, vals in rows:
        f.write(",".join([str(seed), str(idx), str(role), name] + [f"{v:016x}" for v in vals]) + "\n")
