"""Independent checks: brute-force aggregators, exact binomials, and the distance bounds."""
# %%
import numpy as np

from fedra_sim import verify

# %% brute-force Krum / mKrum / median / trimmed mean / Bulyan agree with the fast paths
print(verify.aggregator_oracle_check(instances=100))

# %% log-gamma prior against exact integer binomials
print(verify.hypergeom_check(max_N=30))

# %% expected L1 gap between two clients' sample means vs the bound
for qi, qj in verify.LEMMA1_PAIRS:
    emp, bound, ratio = verify.lemma1_check(qi, qj, np.ones(8), 20_000, np.random.default_rng(qi + qj))
    print(f"q=({qi:>2},{qj:>3})  empirical {emp:7.3f}  bound {bound:7.3f}  ratio {ratio:.4f}")
print("analytic ratio:", round(verify.LEMMA1_RATIO, 4))

# %% the max over n clients stays below sqrt(2 ln 2n) ||sigma||_1 / sqrt(q)
for n in (2, 10, 50):
    emp, bound = verify.lemma3_max_check(n, 4, np.ones(8), 10_000, np.random.default_rng(n))
    print(f"n={n:>2}  empirical {emp:.3f}  bound {bound:.3f}")
