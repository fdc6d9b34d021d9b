"""Power ledger of the source side and what 5 km of fiber costs."""
# %%
from polqkd import PowerLevel, apply_attenuation, fiber_loss_db

laser = PowerLevel(0.0)
after_evoa = apply_attenuation(laser, 21.55)
print(f"laser {laser.value_dbm:.2f} dBm = {laser.mw:.3f} mW")
print(f"after EVOA {after_evoa.value_dbm:.2f} dBm = {after_evoa.uw:.2f} uW")

# %%
for km in [0.001, 1, 5, 25, 50]:
    loss = fiber_loss_db(km, 0.141)
    out = apply_attenuation(after_evoa, loss)
    print(f"{km:>6} km  loss {loss:6.3f} dB  -> {out.uw:6.3f} uW  ({10 ** (-loss / 10):.3f} of input)")

# %%
# The 5 km link keeps about 85 % of the short-patch peak.
print(10 ** (-fiber_loss_db(5, 0.141) / 10))
