"""Evaluation environments: Allelopathic Harvest and HospitalSim."""
