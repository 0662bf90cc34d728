"""
Deep reinforcement learning: dense networks, experience replay and the actor-critic
trainer.
"""
