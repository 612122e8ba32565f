"""
UAV swarm domain: command grammar, token vocabulary and the kinematic simulator.
"""
