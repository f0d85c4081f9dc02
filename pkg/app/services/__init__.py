"""
Services layer for the binaural toolkit.
One module per functional area; orchestration lives in services.pipeline.
"""
