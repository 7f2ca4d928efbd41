#!/usr/bin/env python3
"""Build data/umls/ in the kgseq dataset layout from the UMLS copy shipped in the pykeen wheel.

Usage: python3 tools/fetch_umls.py [out_dir]

Entity and relation surface text is the identifier with underscores replaced by spaces.
"""
import glob
import os
import subprocess
import sys
import tempfile
import zipfile


def main() -> None:
    out = sys.argv[1] if len(sys.argv) > 1 else os.path.join(os.path.dirname(__file__), "..", "data", "umls")
    os.makedirs(out, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.check_call([sys.executable, "-m", "pip", "download", "pykeen", "--no-deps", "-q", "-d", tmp])
        wheel = zipfile.ZipFile(glob.glob(os.path.join(tmp, "pykeen-*.whl"))[0])
        splits = {}
        for src, dst in (("train", "train"), ("valid", "dev"), ("test", "test")):
            lines = wheel.read(f"pykeen/datasets/umls/{src}.txt").decode("utf-8").splitlines()
            splits[dst] = [line.split("\t") for line in lines if line.strip()]

    entities, relations = set(), set()
    for name, rows in splits.items():
        with open(os.path.join(out, f"{name}.tsv"), "w", encoding="utf-8", newline="\n") as f:
            for h, r, t in rows:
                entities.update((h, t))
                relations.add(r)
                f.write(f"{h}\t{r}\t{t}\n")
    for fname, ids in (("entity2text.txt", entities), ("relation2text.txt", relations)):
        with open(os.path.join(out, fname), "w", encoding="utf-8", newline="\n") as f:
            for raw in sorted(ids):
                f.write(f"{raw}\t{raw.replace('_', ' ')}\n")
    print(f"wrote {out}: {len(entities)} entities, {len(relations)} relations, "
          + ", ".join(f"{k}={len(v)}" for k, v in splits.items()))


if __name__ == "__main__":
    main()
