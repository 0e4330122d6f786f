"""Physical constants compiled into the models."""

FARADAY = 96485.33212  # C/mol
GAS_CONSTANT = 8.314462618  # J/(mol K)

# Stoichiometry clamp used by OCP evaluation.
STOICH_EPS = 1e-6

# Floor on the normalized exchange current; hitting it is reported as a cutoff.
EXCHANGE_CURRENT_FLOOR = 1e-12

REGIONS = ("neg", "sep", "pos")
ELECTRODES = ("neg", "pos")
