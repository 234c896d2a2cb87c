"""Short versions of the block-size and payload sweeps on the shipped config.

The full sweeps are ``eov-bench blocksize-sweep`` and ``eov-bench payload-sweep``.
"""
from eovledger.bench import blocksize_sweep, payload_sweep, relative_increase
from eovledger.config import default_config

config = default_config()

# Throughput rises with block size until consensus stops being the bottleneck,
# then larger blocks mostly add waiting time and read conflicts.
print("block MB  tx/s    mean ms  p95 ms  rejected  invalid")
for row in blocksize_sweep(config, sizes_mb=[0.5, 1.5, 2.5, 4.0], duration=1.5):
    m = row.metrics
    print(f"{row.param_value:8g}  {m.throughput_tps:6.0f}  {m.mean_latency_ms:7.1f}  "
          f"{m.p95_latency_ms:6.1f}  {m.rejected:8d}  {m.invalid_at_validation:7d}")

# Larger payloads cost more to ship and to order, with diminishing increments.
rows = payload_sweep(config)
print()
print("payload KB  mean s   median s")
for row in rows:
    m = row.metrics
    print(f"{row.param_value:10g}  {m.mean_latency_ms / 1000:.3f}   {m.median_latency_ms / 1000:.3f}")
print(f"mean latency increase, first to last point: {relative_increase(rows) * 100:.2f}%")
