"""A recorded tag stream, binned and gated by the clock channel."""
# %%
import numpy as np

from polqkd import Channel, ClockSpec, gate_by_mcss, mcss_edges, ttu_bin
from polqkd.timing import channel_timestamps, events_from_counts, make_stream, merge_streams

clock = ClockSpec()
edges = mcss_edges(0.9, clock)
rng = np.random.default_rng(1)
counts = np.where((np.arange(90) % 10) < 5, 200, 25)
detections = events_from_counts(rng.poisson(counts), 10**10, rng)
stream = merge_streams(make_stream(Channel.H_DETECTOR, detections), make_stream(Channel.MCSS, edges))
print(len(stream), "tag events")

# %%
bins = ttu_bin(channel_timestamps(stream, Channel.H_DETECTOR), 0.01, span_s=(0.0, 0.9))
kept = gate_by_mcss(bins, channel_timestamps(stream, Channel.MCSS)[:-1])
print(len(bins), "bins;", len(kept), "retained")
for s in kept:
    print(f"  t={s.bin_start_s:.2f} s  counts={s.counts}")
