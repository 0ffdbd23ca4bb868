"""
Test suite for the stochastic Keller-Segel simulator.

Run all tests:
    pytest tests/ -v

Run specific test file:
    pytest tests/test_operators.py -v
    pytest tests/test_diagnostics.py -v

Test files:
- test_fields.py: grid, transforms, norms and snapshot files
- test_operators.py: spectrum, semigroups, Green solve, flux and certification
- test_model.py: source/noise specs and the assumption validators
- test_noise.py: Wiener increments, diffusion fields, stochastic convolution
- test_integrator.py: cutoff, single steps and whole trajectories
- test_picard.py: Picard iteration on frozen increments
- test_diagnostics.py: cancellation, Ito ledger, mass balance, estimators
- test_runlog.py: check registry, run log and suite executor
- test_workflows.py: config, outputs, ensembles, command line and HTTP handlers
"""
