"""Interactive coding over oblivious adversarial channels, at desk scale.

Subpackages follow the pipeline: `protocol` (trees, blocking), `codes`
(searched linear codes incl. the windowed rateless code), `randomness`
(hashing, small-bias stretch, exchange), `control` (per-iteration control
records and their Enc/Dec), `engine` (the mini-block simulation itself),
`analysis` (state classification, potential function, trace audits), and
`warmup` (the random-error schemes).  `cli` is the experiment runner.
"""

__version__ = "0.1.0"


def version_string() -> str:
    """git-describe-style version embedded in every emitted artifact."""
    import subprocess
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"],
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"icx-{__version__}+{out.stdout.strip()}"
    except Exception:
        pass
    return f"icx-{__version__}"
