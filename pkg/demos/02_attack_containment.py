"""Flood the default network with unregistered devices and watch honest traffic."""
from eovledger.bench import attack
from eovledger.config import default_config

config = default_config()
exp = config.experiment("attack")
print(f"honest load {exp['workload']['arrival_rate']} tx/s, "
      f"{exp['attackers']} attackers at {exp['rate_multiplier']}x that rate together")

baseline, attacked = attack(config, duration=2.0)
for row in (baseline, attacked):
    m = row.metrics
    print(f"attackers={row.param_value:>2}  committed={m.committed_tx:>5}  "
          f"throughput={m.throughput_tps:7.1f} tx/s  mean latency={m.mean_latency_ms:6.1f} ms  "
          f"rejected at endorsement={m.rejected_at_endorsement}")

m = attacked.metrics
print(f"attacker proposals: {m.attacker_generated}, rejected {m.attacker_rejected}, "
      f"found in blocks {m.attacker_in_blocks}")
