"""
tdh - tunnel-diode harmonic signature toolkit.

Library package behind the CLI stages: diode model, oscillator simulation,
spectral extraction, signature maps, fingerprinting and link budgets.
"""

__version__ = "1.0.0"
