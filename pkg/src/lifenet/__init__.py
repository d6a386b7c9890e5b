"""Neural-operator surrogate for EV battery temperature.

A ReLU network learns the time derivative of battery temperature from
driving diagnostics; Euler-forward rollout reconstructs the temperature
trace. Also included: a lumped thermal model for synthetic data and linear
charging-statistics models.
"""

__version__ = "0.1.0"
