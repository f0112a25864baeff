"""Command-line front end, response scoring and the radar-grid demo."""
from .demo import DEFAULT_SCENARIO, demo_radar, emit_plotdata
from .gain import ResponseOption, expected_gain
from .manifest import RunManifest

__all__ = ["DEFAULT_SCENARIO", "ResponseOption", "RunManifest", "demo_radar", "emit_plotdata",
           "expected_gain"]
