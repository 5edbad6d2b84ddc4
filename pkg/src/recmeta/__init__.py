"""Per-user algorithm selection for recommender systems.

Pipeline: interaction log -> temporal split -> portfolio evaluation
(performance matrix) -> user and algorithm meta-features -> gradient-boosted
meta-learners evaluated against single-best and oracle selectors.
"""

__version__ = "0.1.0"
