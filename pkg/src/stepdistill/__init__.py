"""Small seq2seq students trained with teacher rationales as extra supervision.

The package is a self-contained desk-scale lab: a float64 autodiff tensor
engine (`tensor`), a toy encoder-decoder transformer (`model`), a word-level
tokenizer (`tokenizer`), synthetic tasks with derivable step-by-step
rationales (`data`), a rationale-extracting teacher (`teacher`), the
multi-task trainer (`trainer`), and an experiment harness with a CLI
(`harness`, `cli`).
"""

__version__ = "0.1.0"
