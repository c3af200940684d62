# %% [markdown]
# # The `sscdl` command
#
# Everything above is also reachable from the shell.  This script writes a
# toy dataset, trains, evaluates the checkpoint and runs the self checks,
# calling the same entry point the installed `sscdl` script uses.

# %%
import json
import tempfile
from pathlib import Path

from sscdl.cli import main
from sscdl.dataset import write_quadruples
from sscdl.toy import make_toy_ukg

work = Path(tempfile.mkdtemp(prefix="sscdl-demo-"))
quads, vocab = make_toy_ukg(40, 3, 300, seed=1)
(work / "data").mkdir()
write_quadruples(work / "data" / "data.tsv", quads, vocab)

small = ["--set", "dim=8", "--set", "batch_size=64", "--set", "k_neg=4", "--set", "t_max=6",
         "--set", "t_pcdg=2", "--set", "t_cdlrl=4", "--set", "eval_every=3", "--set", "alpha=0.01"]

# %%
main(["train", "--data-dir", str(work / "data"), "--out-dir", str(work / "run")] + small)
print(sorted(p.name for p in (work / "run").iterdir()))

# %%
main(["eval", "--checkpoint", str(work / "run" / "final.ckpt"), "--data-dir", str(work / "data"),
      "--out-dir", str(work / "eval"), "--low-confidence"])
print(json.loads((work / "run" / "manifest.json").read_text())["ablation"])

# %% [markdown]
# Exit codes: 0 success, 1 usage or config error, 2 data or checkpoint
# problem, 3 numerical failure (including a failed `sscdl check`).

# %%
print("exit code for a missing directory:",
      main(["train", "--data-dir", str(work / "nope"), "--out-dir", str(work / "x")] + small))
