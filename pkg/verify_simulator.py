#!/usr/bin/env python
"""
Script to verify the simulator end to end on a short synthetic trace.
Runs the default hardware setup with one of each guardian kernel, injects one
attack per mode and checks every attack is detected.
"""

import sys
from pathlib import Path

# Add the parent directory to the path so we can import the package
sys.path.insert(0, str(Path(__file__).parent))

from fireguard import configure_logging, create_simulator
from fireguard.config import load_config
from fireguard.utils.attacks import inject_attacks, plan_attacks
from fireguard.utils.latency import measure_latency
from fireguard.utils.trace_gen import generate_synthetic, get_profile


def verify_simulator():
    """Simulate a short attacked trace and report detections."""
    configure_logging()
    config = load_config()
    config['kernels'] = [
        {'kind': 'pmc', 'engines': [0],
         'params': {'events': ['LOAD'], 'window': 100, 'bounds': {'LOAD': [0, 120]}}},
        {'kind': 'shadow_stack', 'engines': [1, 2]},
        {'kind': 'asan', 'engines': [3]},
        {'kind': 'uaf', 'engines': [3]},
    ]
    trace = generate_synthetic(get_profile('uaf-heavy'), seed=1, length=4000)
    specs = plan_attacks(trace, count=4, seed=1)
    attacked, truths = inject_attacks(trace, specs)

    metrics = create_simulator(config, check=True).run(attacked)
    report = measure_latency(metrics, truths)

    print(f"✓ Simulated {len(attacked)} records, slowdown {metrics.slowdown:.4f}")
    for attack in report['attacks']:
        mark = '✓' if attack['status'] == 'DETECTED' else '✗'
        latency = f"{attack['latency_ns']:.1f} ns" if attack['latency_ns'] is not None else 'MISS'
        print(f"{mark} {attack['mode']} at seq {attack['seq']}: {latency}")
    return report['missed'] == 0


if __name__ == '__main__':
    try:
        ok = verify_simulator()
    except Exception as e:
        print(f"✗ ERROR: {str(e)}")
        import traceback
        traceback.print_exc()
        sys.exit(1)
    sys.exit(0 if ok else 1)
