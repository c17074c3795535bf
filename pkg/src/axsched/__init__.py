"""Uplink OFDMA + MU-MIMO scheduling sandbox for 802.11ax-style WLANs.

Subpackages cover the RU plan and goal table (ru), channel generation
(channel), the link-level pipeline (phy), traffic buffers (traffic), the
Q-network substrate (nn), the hierarchical learned scheduler (agents),
reference schedulers (baselines), an exact tiny-instance solver (oracle), and
the experiment runtime with its CLI (config, sim, report, cli).
"""

__version__ = "0.1.0"
