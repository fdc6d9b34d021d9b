"""A full 300 s session: the key, its erasures and the QBER as drift sets in."""
# %%
import numpy as np

from polqkd import SessionConfig, run_session

report = run_session(SessionConfig(seed=27))
print("cycles", report.n_cycles, "erasures", report.erasures, "key errors", report.key_errors)
print("usable key bits", report.usable_key_length)

# %%
for t, cum, win in report.qber_series[::20]:
    print(f"t={t:6.1f} s  cumulative={cum:.4f}  last 30 s={win:.4f}")

# %%
thetas = np.array([r.theta_rad for r in report.per_cycle_log])
print("largest misalignment reached:", np.abs(thetas).max(), "rad")

# %%
# Same seed, same numbers.
again = run_session(SessionConfig(seed=27))
print("repeatable:", again.bin_counts.tobytes() == report.bin_counts.tobytes())
