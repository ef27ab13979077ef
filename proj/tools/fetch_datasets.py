#!/usr/bin/env python3
"""Fetch dataset archives, check their SHA-256, unpack them under a data root
and run `plantseg datasets verify` on the result.

The manifest is a JSON object keyed by dataset id:

    {
      "phenobench": {
        "archives": [
          {"url": "https://.../PhenoBench.zip", "sha256": "<hex>", "strip": 1}
        ]
      },
      "cvppp2017": {
        "archives": [{"path": "/downloads/CVPPP2017_LSC_training.zip", "sha256": "<hex>"}],
        "move": {"A1": "train/A1"}
      }
    }

"url" downloads (resumable via a .part file), "path" uses an archive you
fetched by hand (some datasets need a registration form). "strip" drops
leading path components while unpacking, "into" unpacks below a subdirectory
of the dataset root, and "move" renames paths afterwards so the tree matches
the layout `plantseg datasets list` prints.

    python3 tools/fetch_datasets.py manifest.json --root data --only phenobench
"""
import argparse
import hashlib
import json
import pathlib
import shutil
import subprocess
import sys
import tarfile
import tempfile
import urllib.request
import zipfile

KNOWN = ("phenobench", "appletree", "plantgrowth", "cvppp2017")


def sha256_of(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def download(url, dest):
    part = dest.with_suffix(dest.suffix + ".part")
    start = part.stat().st_size if part.exists() else 0
    req = urllib.request.Request(url, headers={"Range": f"bytes={start}-"} if start else {})
    with urllib.request.urlopen(req) as resp:
        mode = "ab" if start and resp.status == 206 else "wb"
        with open(part, mode) as out:
            shutil.copyfileobj(resp, out, 1 << 20)
    part.rename(dest)


def members(names, strip):
    for name in names:
        parts = pathlib.PurePosixPath(name).parts
        if len(parts) <= strip:
            continue
        rel = pathlib.PurePosixPath(*parts[strip:])
        if rel.is_absolute() or ".." in rel.parts:
            raise SystemExit(f"refusing unsafe archive member {name}")
        yield name, rel


def unpack(archive, dest, strip):
    dest.mkdir(parents=True, exist_ok=True)
    if zipfile.is_zipfile(archive):
        with zipfile.ZipFile(archive) as z:
            for name, rel in members(z.namelist(), strip):
                if name.endswith("/"):
                    continue
                target = dest / rel
                target.parent.mkdir(parents=True, exist_ok=True)
                with z.open(name) as src, open(target, "wb") as out:
                    shutil.copyfileobj(src, out)
    elif tarfile.is_tarfile(archive):
        with tarfile.open(archive) as t:
            by_name = {m.name: m for m in t.getmembers() if m.isfile()}
            for name, rel in members(by_name, strip):
                target = dest / rel
                target.parent.mkdir(parents=True, exist_ok=True)
                with t.extractfile(by_name[name]) as src, open(target, "wb") as out:
                    shutil.copyfileobj(src, out)
    else:
        raise SystemExit(f"{archive}: not a zip or tar archive")


def fetch(dataset, entry, root, cache, force):
    dest = root / dataset
    if dest.exists() and any(dest.iterdir()) and not force:
        print(f"{dataset}: {dest} already populated, skipping (use --force to redo)")
        return
    for spec in entry.get("archives", []):
        expected = spec.get("sha256")
        if not expected:
            raise SystemExit(f"{dataset}: every archive needs a sha256 in the manifest")
        if "path" in spec:
            archive = pathlib.Path(spec["path"]).expanduser()
            if not archive.exists():
                raise SystemExit(f"{dataset}: archive {archive} not found")
        else:
            archive = cache / pathlib.PurePosixPath(urllib.request.urlparse(spec["url"]).path).name
            if not archive.exists():
                print(f"{dataset}: downloading {spec['url']}")
                download(spec["url"], archive)
        got = sha256_of(archive)
        if got != expected.lower():
            raise SystemExit(f"{dataset}: checksum mismatch for {archive}\n  expected {expected}\n  got      {got}")
        print(f"{dataset}: {archive.name} sha256 ok, unpacking")
        unpack(archive, dest / spec.get("into", ""), int(spec.get("strip", 0)))
    for src, dst in entry.get("move", {}).items():
        s, d = dest / src, dest / dst
        if s.exists():
            d.parent.mkdir(parents=True, exist_ok=True)
            s.rename(d)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("manifest", type=pathlib.Path)
    ap.add_argument("--root", type=pathlib.Path, default=pathlib.Path("data"))
    ap.add_argument("--cache", type=pathlib.Path, default=None, help="where downloads are kept")
    ap.add_argument("--only", nargs="*", default=None)
    ap.add_argument("--force", action="store_true")
    ap.add_argument("--plantseg", default="plantseg", help="binary used for the final verify")
    args = ap.parse_args()
    sys.stdout.reconfigure(line_buffering=True)

    manifest = json.loads(args.manifest.read_text())
    unknown = set(manifest) - set(KNOWN)
    if unknown:
        raise SystemExit(f"unknown dataset ids in manifest: {sorted(unknown)}")
    cache = args.cache or pathlib.Path(tempfile.gettempdir()) / "plantseg-downloads"
    cache.mkdir(parents=True, exist_ok=True)
    status = 0
    for dataset in args.only or list(manifest):
        if dataset not in manifest:
            raise SystemExit(f"{dataset}: not in manifest")
        fetch(dataset, manifest[dataset], args.root, cache, args.force)
        if shutil.which(args.plantseg) or pathlib.Path(args.plantseg).exists():
            rc = subprocess.call([args.plantseg, "datasets", "verify", "--dataset", dataset,
                                  "--root", str(args.root / dataset)])
            status = status or rc
    sys.exit(status)


if __name__ == "__main__":
    main()
