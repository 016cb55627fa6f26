"""Desk-scale lab for evidence-aware frame selection with reinforcement learning.

Modules: ``timeline`` (frame sampling and localized re-sampling), ``reward``
(the EARL reward and its schedule), ``env`` (episode state machine), ``synth``
(synthetic tasks and the answer oracle), ``policy`` (random, oracle and softmax
policies), ``trainer`` (imitation pretraining and group REINFORCE) and ``cli``.
"""

__version__ = "0.1.0"
