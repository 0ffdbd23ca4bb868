"""Run orchestration: configuration, ensembles, outputs and the acceptance suite"""
