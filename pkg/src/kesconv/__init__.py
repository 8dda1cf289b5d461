"""Knowledge-grounded response generation with prompt-encoded past states.

A frozen decoder-only language model is steered by two trainable prompt
encoders: one reads the dialogue context, the other reads the answer of the
top-1 QA entry retrieved by inner product. Their MLP-reparameterized prompt
encodings are injected as the decoder's past key/value states.
"""

__version__ = "0.1.0"
