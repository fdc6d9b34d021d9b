"""H/V split behind the PBS as the phase modulator voltage is swept."""
# %%
import numpy as np

from polqkd import pbs_h_probability, pbs_v_probability, phase_for_voltage

v = np.arange(0.0, 8.01, 0.5)
phi = phase_for_voltage(v, v_pi=4.0)
for volts, p in zip(v, phi):
    print(f"{volts:4.1f} V  phi={p:5.3f}  H={pbs_h_probability(p):.3f}  V={pbs_v_probability(p):.3f}")

# %%
# A misaligned analyzer leaks H light into the V arm and the other way round.
for theta in [0.0, 0.05, 0.2, np.pi / 4]:
    print(f"theta={theta:.3f}  P(H|H)={pbs_h_probability(0.0, theta):.4f}  "
          f"P(H|V)={pbs_h_probability(np.pi, theta):.4f}")
