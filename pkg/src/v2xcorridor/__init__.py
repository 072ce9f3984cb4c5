"""Connected-vehicle corridor engine: V2X decoding, scenario encoding, the four
reasoning tasks, LLM gateway, replay and evaluation."""

__version__ = "0.1.0"
