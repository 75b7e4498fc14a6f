"""A single round by hand: quantity-weighted scores and the FedRA cut."""
# %%
import numpy as np

from fedra_sim import ClientReport, aggregate, FedAvgWeighted, FedRA
from fedra_sim.fedra import q_value, robust_scores

# %% Q-value: L1 distance scaled by sqrt(q_i q_j / (q_i + q_j))
print(q_value([0, 0], [1, 2], 2, 2))   # 3.0
print(q_value([0], [2], 1, 1))         # sqrt(2)

# %% five benign clients near zero, one malicious client far away claiming a huge quantity
rng = np.random.default_rng(0)
reports = [ClientReport(i, rng.normal(0, 0.1, size=3), int(q))
           for i, q in enumerate([12, 30, 7, 25, 18])]
reports.append(ClientReport(5, np.array([4.0, -4.0, 4.0]), 10_000))

table = robust_scores(reports, m_tilde=1, gamma=0.1)
for cid, s in sorted(table.as_dict().items(), key=lambda kv: kv[1]):
    print(f"client {cid}: score {s:10.3f}")

# %% FedAvg follows the big quantity; FedRA drops it
avg, _ = aggregate(FedAvgWeighted(), reports)
fr, info = aggregate(FedRA(gamma=0.1, M_tilde=10, N=60, ratio_mode="dynamic"), reports)
print("fedavg  ", np.round(avg, 3))
print("fedra   ", np.round(fr, 3), "selected", info.selected_ids, "m~", info.m_tilde)
