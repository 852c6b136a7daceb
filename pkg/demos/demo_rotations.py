"""Tour of the rotation encodings: quaternion, Euler sine/cosine, and 6D.

Shows encode/decode round trips, the 6D representation's robustness to raw
(unnormalized) network outputs, and the quaternion double cover that makes
naive quaternion regression targets ambiguous.
"""

import numpy as np

from planereg import RotationKind, decode_rotation, encode_rotation
from planereg.geometry import rotation_from_euler_zyx

rng = np.random.default_rng(0)


def random_rotation():
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    return decode_rotation(q, RotationKind.QUATERNION)


print("=== encode / decode round trips ===")
R = random_rotation()
for kind in RotationKind:
    enc = encode_rotation(R, kind)
    back = decode_rotation(enc, kind)
    print(f"{kind.value:>13}: {len(enc)} values, round-trip error {np.abs(back - R).max():.2e}")

print("\n=== 6D decode cleans up noisy outputs ===")
enc = encode_rotation(R, RotationKind.SIXD)
noisy = enc + rng.uniform(-0.3, 0.3, size=6)
back = decode_rotation(noisy, RotationKind.SIXD)
print("orthonormality of decode(noisy):", np.abs(back.T @ back - np.eye(3)).max())
print("determinant:", np.linalg.det(back))

print("\n=== quaternion double cover ===")
q = encode_rotation(R, RotationKind.QUATERNION)
same = np.array_equal(
    decode_rotation(q, RotationKind.QUATERNION), decode_rotation(-q, RotationKind.QUATERNION)
)
print("q and -q decode to the same rotation:", same)
print("encode always returns the w >= 0 representative:", q[0] >= 0)

print("\n=== Euler sine/cosine pairs are scale invariant ===")
R90 = rotation_from_euler_zyx(np.pi / 4, 0.0, 0.0)
enc = encode_rotation(R90, RotationKind.EULER_SINCOS)
scaled = enc * np.repeat([3.7, 0.2, 1.4], 2)
print("decode(scaled) == decode(enc):", np.allclose(
    decode_rotation(scaled, RotationKind.EULER_SINCOS), decode_rotation(enc, RotationKind.EULER_SINCOS)
))
