"""crossnav: narrow-crossing social navigation testbed.

Learns time-varying reward maps from yield-and-wait demonstrations with a
smoothed maximum-entropy deep IRL trainer, executes them through an ORCA
local controller, and benchmarks against rule-based baselines in a
deterministic 2-D door-crossing simulator.
"""

__version__ = "0.1.0"
