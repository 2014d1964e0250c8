"""Generate the static 4x4 marker dictionary in src/calibcube/_dictionary.py.

Greedy seeded search: every accepted code keeps Hamming distance >= MIN_DIST
to all rotations of every other code and to its own non-trivial rotations.
Run once; the output is committed.
"""

import numpy as np

N_MARKERS = 50
MIN_DIST = 4
SEED = 20240


def rotations(bits):
    b = bits.reshape(4, 4)
    return [np.rot90(b, -k).reshape(-1) for k in range(4)]


def main():
    rng = np.random.default_rng(SEED)
    codes = []
    while len(codes) < N_MARKERS:
        cand = rng.integers(0, 2, 16)
        # avoid near-uniform patterns that rectify poorly
        if not 5 <= cand.sum() <= 11:
            continue
        rots = rotations(cand)
        if min(np.sum(rots[0] != r) for r in rots[1:]) < MIN_DIST:
            continue
        if all(np.sum(r != c) >= MIN_DIST for c in codes for r in rots):
            codes.append(cand)
    rows = ["    0x%04X," % int("".join(map(str, c)), 2) for c in codes]
    print('"""4x4-bit marker dictionary (50 codes). Generated by tools/gen_dictionary.py."""\n')
    print(f"MIN_DISTANCE = {MIN_DIST}")
    print("BITS = 4")
    print("CODES = (")
    print("\n".join(rows))
    print(")")


if __name__ == "__main__":
    main()
