#!/usr/bin/env python3
"""Download the five Set5 benchmark images into data/set5/.

The acceptance suite checks the bicubic baseline numbers against Set5 when
these files are present (and skips that single test otherwise).  Run this
once on a machine with network access:

    python3 scripts/fetch_set5.py

Images are pulled from the LapSRN project mirror of the standard benchmark
  https://github.com/phoenix104104/LapSRN (test_datasets Set5)
via raw.githubusercontent.com, and saved as 8-bit RGB PNGs.
"""

import io
import sys
import urllib.request
from pathlib import Path

NAMES = ("baby", "bird", "butterfly", "head", "woman")
BASE = ("https://raw.githubusercontent.com/phoenix104104/LapSRN/master/"
        "datasets/Set5/GT/{}.png")
OUT_DIR = Path(__file__).resolve().parent.parent / "data" / "set5"


def main() -> int:
    try:
        from PIL import Image
    except ImportError:
        print("Pillow is required (pip install pillow)", file=sys.stderr)
        return 1
    OUT_DIR.mkdir(parents=True, exist_ok=True)
    failures = 0
    for name in NAMES:
        dest = OUT_DIR / f"{name}.png"
        if dest.exists():
            print(f"{dest} already present")
            continue
        url = BASE.format(name)
        try:
            with urllib.request.urlopen(url, timeout=30) as response:
                raw = response.read()
        except Exception as exc:
            print(f"failed to fetch {url}: {exc}", file=sys.stderr)
            failures += 1
            continue
        img = Image.open(io.BytesIO(raw)).convert("RGB")
        img.save(dest, format="PNG")
        print(f"saved {dest} ({img.width}x{img.height})")
    if failures:
        print(f"{failures} downloads failed; the Set5 acceptance test will "
              f"be skipped until data/set5 holds all five images",
              file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
