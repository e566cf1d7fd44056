"""skilloop: a desk-scale loop for growing a robot skill library.

A deterministic blocks world feeds a multi-reward relabeling pipeline; a
curriculum (backed by a language model or a deterministic mock) proposes
tasks, decomposes them into library skills, and ships plans over a small
message bus to embodiment workers; an offline fitted-Q learner turns the
collected episodes into per-skill policies; an analysis pass judges learning
curves and gates skills into the library.
"""

__version__ = "0.1.0"
