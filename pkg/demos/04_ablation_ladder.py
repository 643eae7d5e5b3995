"""
The ablation ladder
===================

Add modalities one at a time: box only, then the local crop, then the
scene (segmentation and flow), then pose. Each rung should see more of the
label's evidence. This is a shortened run; the acceptance test uses 400/100
scenes, three seeds and eight epochs.
"""

from dataclasses import replace

from pedfusion import harness, synthgen
from pedfusion.config import RunConfig

samples, _ = synthgen.generate_in_memory(synthgen.ScenarioParams(n_samples=150))
train, test = samples[:120], samples[120:]

cfg = RunConfig(lr=3e-4, epochs=3, batch=2)
rows = harness.ablate(replace(cfg, seeds=1), train, test, echo=print)
print(harness.format_table(rows))
print("steps within tolerance:", harness.ladder_steps(rows))
