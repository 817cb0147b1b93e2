"""Virtualized WSN IaaS: simulated sensor infrastructure plus the
management stack that lets a PaaS-role client discover sensors and drive
virtual-sensor lifecycles over REST."""

__version__ = "0.1.0"
