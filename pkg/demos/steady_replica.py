"""Detected steady set versus ground truth on the time-course replica."""
from screenode.replica import build_replica
from screenode.steady import baseline_band, lfc_series

screen = build_replica(0)
found = screen.detect()
print("converging (truth):", screen.converging)
print("detected:          ", found)
series = screen.filtered_series()
mean, sd = baseline_band(series)
print("control band on the last day pair: %.4f +/- %.4f" % (mean[-1], sd[-1]))
for p in screen.diverging[:3]:
    print(f"diverging {p}: LFC series", lfc_series(series, p).round(4))
