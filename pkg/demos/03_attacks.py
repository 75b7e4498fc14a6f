"""What colluders submit: LIE, Optimize, and inflated quantities."""
# %%
import numpy as np

from fedra_sim.adversary import AttackSpec, craft, enhanced_quantity, lie_z

rng = np.random.default_rng(2)
honest = [rng.normal([1.0, -0.5], 0.2) for _ in range(4)]
quantities = [8, 15, 40, 22]

# %% LIE shifts the colluders' mean by z standard deviations
print("default z for n=50, m=5:", round(lie_z(50, 5), 3))
ups, qs = craft(AttackSpec("lie", z=1.5), honest, quantities, n=50)
print("mean   ", np.round(np.mean(honest, axis=0), 3))
print("lie    ", np.round(ups[0], 3), qs)

# %% Optimize pushes against the sign of the mean
ups, _ = craft(AttackSpec("optimize", lam=4.0), honest, quantities, n=50)
print("optim  ", np.round(ups[0], 3))

# %% quantity enhancement: mean + alpha_q * std of the colluders' true quantities
for a in (0, 1, 2, 5, 10):
    print(f"alpha_q={a:>2}: claimed quantity {enhanced_quantity(quantities, a)}")
