"""Three count plateaus and the thresholds placed between them."""
# %%
import math

import numpy as np

from polqkd import DetectorSpec, calibrate_thresholds, expected_h_rate
from polqkd.devices import CLOSED, OPEN
from polqkd.optics import poisson_cdf, poisson_tail

det = DetectorSpec()
rates = {
    "H": expected_h_rate(0.0, 0.0, OPEN, det),
    "V": expected_h_rate(math.pi, 0.0, OPEN, det),
    "gate closed": expected_h_rate(0.0, 0.0, CLOSED, det),
}
for name, r in rates.items():
    print(f"{name:12s} {r:8.1f} counts/s -> {r * 0.01:5.1f} per 10 ms bin")

th = calibrate_thresholds(det, 0.01)
print(th)

# %%
# How often each plateau lands on the wrong side of a threshold.
print("H read as V     ", poisson_cdf(200, th.t_hv - 1))
print("V read as H     ", poisson_tail(75, th.t_hv))
print("V erased        ", poisson_cdf(75, th.t_signal - 1))
print("dark read as bit", poisson_tail(25, th.t_signal))

# %%
rng = np.random.default_rng(0)
draws = rng.poisson(200, 10**6)
print("sampled H misreads per million:", int((draws < th.t_hv).sum()))
