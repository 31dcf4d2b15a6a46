"""tsdw-extract: images plus a parser and three backbones to one TSDW file.

Image files are discovered under --images (png/jpg, sorted by name) and
their labels parsed from filenames shaped like

    p<person>_c<clothes>_cam<camera>_<anything>.<ext>

e.g. p0007_c012_cam1_shot3.png. Parser and backbones accept "stub"
("stub:<dim>" for backbones) or a path to a Python file exporting
build_parser() / build_backbone().
"""

from __future__ import annotations

import argparse
import json
import re
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from .backbones import load_backbone
from .errors import AlignmentError, DimensionError
from .extract import ExtractItem, extract
from .parsing import load_parser

_NAME_RE = re.compile(r"^p(\d+)_c(\d+)_cam(\d+)")


def iter_items(images_dir: Path):
    paths = sorted(p for p in images_dir.iterdir()
                   if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
    if not paths:
        raise FileNotFoundError(f"no images under {images_dir}")
    for path in paths:
        match = _NAME_RE.match(path.stem)
        if not match:
            raise ValueError(
                f"{path.name}: expected p<person>_c<clothes>_cam<camera>_* naming")
        person, clothes, camera = (int(g) for g in match.groups())
        image = np.asarray(Image.open(path).convert("RGB"))
        yield ExtractItem(image_id=path.stem, image=image, person_id=person,
                          camera_id=camera, clothes_id=clothes)


def build_parser_args() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tsdw-extract", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--images", required=True, help="directory of labelled images")
    parser.add_argument("--parser", default="stub",
                        help="human parser: 'stub' or a Python plugin file")
    parser.add_argument("--backbone-face", default="stub:16")
    parser.add_argument("--backbone-limb", default="stub:16")
    parser.add_argument("--backbone-global", default="stub:16")
    parser.add_argument("--theta-face", type=float, default=0.005,
                        help="minimum face area as a fraction of the image")
    parser.add_argument("--out", required=True, help="output embedding file")
    return parser


def main(argv=None) -> int:
    args = build_parser_args().parse_args(argv)
    try:
        parser = load_parser(args.parser)
        count = extract(
            iter_items(Path(args.images)),
            parser,
            load_backbone(args.backbone_face),
            load_backbone(args.backbone_limb),
            load_backbone(args.backbone_global),
            args.theta_face,
            args.out,
        )
    except (AlignmentError, DimensionError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps({"out": args.out, "records": count,
                      "theta_face": args.theta_face}, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
