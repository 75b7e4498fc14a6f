"""Fixing the malicious-count guess at 5 or 15 instead of estimating it each round."""
# %%
from fedra_sim.config import config_from_dict
from fedra_sim.engine import run_simulation


def final_error(override, seed):
    cfg = config_from_dict({
        "rounds": 200, "seed": seed, "eval_interval": 200,
        "task": {"kind": "gaussian_mean", "d": 10},
        "population": {"N": 300, "M": 30, "n": 20, "ratio_mode": "dynamic"},
        "rule": {"kind": "fedra", "m_tilde_override": override},
        "attack": {"kind": "lie", "alpha_q": 10.0, "z": 3.0},
        "server": {"lr": 0.03},
    })
    return run_simulation(cfg)[-1].eval_accuracy


# %%
print("seed   mcne   m=5    m=15")
for seed in range(3):
    row = [final_error(o, seed) for o in (None, 5, 15)]
    print(f"{seed:>4}  " + "  ".join(f"{e:.3f}" for e in row))
# under-estimating lets colluders through; over-estimating throws away benign mass
