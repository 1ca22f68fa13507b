"""Step-size certificates: when does the sketched step make progress?

Computes the descent matrix W, the step constant theta (max step 1/theta),
and the contraction factor for several sketch choices, including the 2-d
counterexample where no admissible step exists.
"""

import numpy as np

from istlab import (
    QuadraticProblem,
    SketchKind,
    certificate,
    gen_heterogeneous,
)

p = gen_heterogeneous(n=4, d=4, seed=11)
lam = np.linalg.eigvalsh(p.L_bar)
print(f"heterogeneous problem, n = d = 4, spectrum of L_bar in [{lam[0]:.3f}, {lam[-1]:.3f}]")
print()

for kind in (SketchKind.identity(), SketchKind.scaled_perm_het()):
    cert = certificate(p, kind)
    print(f"sketch = {kind.kind}")
    print(f"  theta     = {cert.theta:.6f}   (identity gives lambda_max, scaling gives 1)")
    print(f"  gamma_max = {cert.gamma_max:.6f}")
    print(f"  rho at gamma_max = {cert.rho:.3e}")
    if cert.sigma2 is not None:
        print(f"  sigma^2   = {cert.sigma2:.6f}")
    print()

print("rho = 0 for the scaled sketch means the mean iterate reaches its fixed")
print("point after a single step of size 1.")
print()

# The classic failure: an unscaled permutation sketch on a correlated
# homogeneous problem makes W indefinite, so no step size is certified.
L = np.array([[1.0, 1.5], [1.5, 1.0]])
bad = QuadraticProblem.from_arrays([L, L], [[0.0, 0.0], [0.0, 0.0]])
cert = certificate(bad, SketchKind.perm_q())
print("counterexample: L = [[1, 1.5], [1.5, 1]], unscaled permutation sketch")
print(f"  W = {cert.descent.tolist()}")
print(f"  det(W) = {np.linalg.det(cert.descent):.3f} < 0 -> W is indefinite")
print(f"  admissible: {cert.admissible}  (no theta > 0 exists)")
