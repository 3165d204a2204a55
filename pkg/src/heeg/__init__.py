"""Hierarchy-aware episodic evaluation for word-level EEG decoding.

The package builds a concept DAG over a word vocabulary, aligns and
preprocesses multi-montage EEG into fixed 1-second windows, samples
variable-way/variable-shot episodes from concept nodes, adapts small
embedding models per episode (plain fine-tuning, first-order MAML, or
prototype-initialized first-order MAML), and reports chance-normalized
accuracy as a function of concept span and abstraction level.
"""

__version__ = "0.1.0"
