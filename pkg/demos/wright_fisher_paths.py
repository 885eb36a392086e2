"""
Wright-Fisher paths stay in (0, 1)
==================================

Splitting schemes keep the process inside its state space; Euler-Maruyama
does not, and needs truncation.
"""
from splitsde.analysis import state_space_sweep

params = (1.0, 0.5, -0.3)  # theta, mu, a

for scheme in ("LT", "Strang", "EuM"):
    r = state_space_sweep(scheme, "wf", params, x0=0.5, h=0.01, n_steps=300, M=1000, seed=4)
    print(f"{scheme:7s} values outside (0,1): {r['violations']:6d}   range [{r['min']:.2e}, {r['max']:.6f}]")

# near the boundary the difference is larger
for scheme in ("LT", "Strang", "EuM"):
    r = state_space_sweep(scheme, "wf", params, x0=0.02, h=0.05, n_steps=100, M=1000, seed=4)
    print(f"x0=0.02, h=0.05, {scheme:7s} violations: {r['violations']}")
