"""How many malicious clients are in this round?  The MCNE estimate on synthetic scores."""
# %%
import numpy as np

from fedra_sim.fedra import estimate_malicious_count, hypergeom_log_weight, log_likelihood
from fedra_sim.verify import mcne_recovery

# %% the prior: hypergeometric weight of seeing m of M~=50 malicious among n=50 of N=500
prior = np.array([hypergeom_log_weight(500, 50, 50, m) for m in range(15)])
print("prior mode:", int(np.argmax(prior)))

# %% a clean split: three low scores, two high ones
scores = np.sort([1.0, 1.1, 0.9, 5.0, 5.2])
lls = [log_likelihood(scores, m, 100, 10) for m in range(4)]
print("log-likelihood by m:", np.round(lls, 2))
print("estimate:", estimate_malicious_count(scores, 100, 10))

# %% affine maps of the scores leave the estimate alone
print("scaled + shifted:", estimate_malicious_count(37 * scores - 4, 100, 10))

# %% exact recovery against the separation between benign and malicious scores
for sep in (2, 4, 6, 10, 100):
    rate = mcne_recovery(500, 50, 50, sep, 300, np.random.default_rng(1))
    print(f"separation {sep:>3}: exact recovery {rate:.2f}")
# exact recovery tops out well below 1 at moderate separation: the split
# likelihood prefers to move the benign upper tail into the malicious group
