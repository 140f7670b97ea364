"""
The command-line pipeline
=========================

The same steps through ``sparsevlm``: generate data, pretrain, prune to 2:4,
restore, evaluate and verify. Every file written here is byte-identical on a
rerun with the same config. From a shell the first line reads
``sparsevlm gen-data data.bin``.
"""

import tempfile
from pathlib import Path

from sparsevlm.cli import main

work = Path(tempfile.mkdtemp(prefix="sparsevlm-"))
steps = [
    ["gen-data", work / "data.bin"],
    ["pretrain", work / "data.bin", work / "dense.ckpt"],
    ["prune", work / "dense.ckpt", work / "nm.ckpt", "--calib", work / "data.bin", "--set", "nm=2:4"],
    ["finetune", work / "nm.ckpt", work / "data.bin", work / "restored.ckpt", "--report", work / "train.csv"],
    ["eval", work / "restored.ckpt", work / "data.bin"],
    ["verify", work / "restored.ckpt"],
]
for argv in steps:
    print("$ sparsevlm", " ".join(str(a).replace(str(work), ".") for a in argv))
    code = main([str(a) for a in argv])
    if code:
        raise SystemExit(code)

# Exit codes: 2 for usage or config mistakes, 3 for unreadable data or
# checkpoints, 4 when a checkpoint breaks an invariant.
print("$ sparsevlm eval missing.ckpt data.bin  ->  exit", main(["eval", str(work / "missing.ckpt"), str(work / "data.bin")]))
print("outputs in", work)
