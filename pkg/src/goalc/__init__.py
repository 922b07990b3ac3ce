"""goalc: compile contextual goal models into symbolic reliability/cost
formulae, emit probabilistic model-checker artifacts, and drive a
monitor-analyze-plan-execute loop that keeps a managed system on its
reliability and cost setpoints."""

__version__ = "0.1.0"
