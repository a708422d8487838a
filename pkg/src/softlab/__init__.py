"""Hard versus soft label training on an ambiguous synthetic image benchmark.

Modules: ``labels`` (annotation aggregation and simulation), ``synth``
(dataset generator and SLD1 files), ``nnet`` (numpy CNN, loss, SGD, SLM1
files), ``metrics``, ``embed`` (t-SNE of GAP features), ``experiment`` and
``cli``.
"""

__version__ = "0.1.0"
