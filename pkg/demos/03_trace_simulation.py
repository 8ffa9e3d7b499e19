"""Replay heap workloads and measure how the adaptive store holds up.

For each synthetic preset (shaped after the measured programs) and each
tag width, the simulator reports how many pages kept their run tree and
how much tag storage was actually used, relative to the always-128-byte
flat array.
"""

from tagmem.sim import SimConfig, simulate_preset, summarize

PRESETS = ("fig2", "apache2-like", "axel-like", "ffmpeg-like",
           "md5sum-like", "pbzip2-like")

config = SimConfig(policy="glibc", widths=(4, 8, 16, 32), seed=7)
reports = [(name, simulate_preset(name, config)) for name in PRESETS]

print(f"{'workload':14s} {'width':>5s} {'pages':>6s} {'btree%':>7s} "
      f"{'space':>7s} {'runs/pg':>8s} {'depth':>6s}")
for name, report in reports:
    for bits, ws in sorted(report.widths.items()):
        print(f"{name:14s} {bits:5d} {ws.pages_total:6d} "
              f"{100 * ws.fraction_btree:6.1f}% {ws.space_ratio:7.3f} "
              f"{ws.avg_max_runs_per_page:8.2f} {ws.depth_max:6d}")
    print()

# the comparison table the plotting pipeline consumes
rows = summarize(reports)
monotone = all(row["fraction_monotone_nonincreasing"] for row in rows)
print("fraction_btree monotone non-increasing in width for every workload:",
      monotone)
print("few-large-allocations preset (pbzip2-like) 4-bit space ratio:",
      next(r["space_ratio"] for r in rows
           if r["workload"] == "pbzip2-like" and r["width_bits"] == 4))
