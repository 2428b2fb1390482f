"""Bundled network presets (JSON documents loaded by latentspike.simulate)."""
