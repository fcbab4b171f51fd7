"""diffquad: batched differentiable quadrotor simulation and policy training.

Training by backpropagation through time uses a realistic forward model and
a cheap analytic backward model; a PPO baseline, state-representation
pretraining, and a throughput benchmark round out the toolkit.
"""

__version__ = "0.1.0"
