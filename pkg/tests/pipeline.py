"""The small end-to-end CLI pipeline behind the golden-file test."""

from normcraft.cli import run

TINY_CONFIG = """[net]
patch_size = 32
lfe_scales = [8, 16]
hier_scales = [8, 8, 4, 4]
pff_neighbors = 4
feature_widths = [6, 8, 10]

[train]
epochs = 2
batch_size = 8
n_patches = 24
"""


def run_pipeline(workdir):
    """Run gen -> relabel -> train -> estimate -> eval inside ``workdir`` (cwd); returns the eval CSV text."""
    (workdir / "tiny.toml").write_text(TINY_CONFIG)
    steps = [
        ["gen-bench", "--out", "data", "--shapes", "plane,sphere", "--n-points", "300", "--sigma", "0.006",
         "--seed", "7"],
        ["relabel-cnd", "--noisy", "data/sphere_noisy.xyz", "--clean", "data/sphere_clean.xyz"],
        ["train-toy", "--data", "data", "--config", "tiny.toml", "--out", "w.bin", "--trace", "loss.csv",
         "--seed", "3"],
        ["estimate", "--method", "cmgnet", "--in", "data/sphere_noisy.xyz", "--ckpt", "w.bin", "--out",
         "net.normals", "--jobs", "2"],
        ["eval", "--pred", "net.normals", "--noisy", "data/sphere_noisy.xyz", "--clean", "data/sphere_clean.xyz",
         "--annotated", "data/sphere_noisy.normals", "--config", "tiny.toml", "--out", "report.csv"],
    ]
    for argv in steps:
        code = run(argv)
        if code != 0:
            raise RuntimeError(f"step {argv[0]} exited with {code}")
    return (workdir / "report.csv").read_text()
