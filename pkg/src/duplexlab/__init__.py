"""duplexlab: desk-scale full-duplex spoken-dialogue transformer.

Two user-stream routing strategies (channel fusion and cross-attention
adapters) trained end-to-end on a seeded synthetic speech world, with a
step-wise duplex inference engine, behavioral evaluation harness, and a live
session server.
"""

__version__ = "0.1.0"
