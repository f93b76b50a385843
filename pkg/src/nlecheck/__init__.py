"""Faithfulness tests for natural language explanation (NLE) models.

The harness runs two automatic tests against any model that speaks the
JSON-lines wire protocol (see ``nlecheck.protocol``):

* counterfactual insertion test: find a contiguous word insertion that flips
  the model's prediction, then check whether the new explanation mentions
  the inserted words;
* input reconstruction test: rebuild an input from the reasons stated in the
  generated explanation and check that the prediction survives.
"""

__version__ = "0.1.0"
