"""Procedural "shapes-world" scenes with depth maps and templated captions."""
from dataclasses import dataclass, field

import numpy as np

COLORS = {
    "red": (0.9, 0.1, 0.1),
    "green": (0.1, 0.8, 0.1),
    "blue": (0.15, 0.25, 0.95),
    "yellow": (0.95, 0.9, 0.1),
    "cyan": (0.1, 0.85, 0.9),
    "magenta": (0.9, 0.1, 0.85),
    "white": (0.97, 0.97, 0.97),
    "orange": (1.0, 0.55, 0.05),
}
SHAPES = ("circle", "square", "triangle")
RELATIONS = ("above", "below", "left of", "right of")
INVERSE = {"above": "below", "below": "above", "left of": "right of", "right of": "left of"}
IMAGE_SIZE = 64


@dataclass
class Shape:
    kind: str
    color: str
    cx: float
    cy: float
    size: float
    depth: float


@dataclass
class ShapesScene:
    background: tuple
    shapes: list
    captions: list = field(default_factory=list)


@dataclass
class ShapesRecord:
    image_id: int
    image: np.ndarray
    depth: np.ndarray
    captions: list
    scene: ShapesScene


def relation(a, b):
    """Spatial relation of shape ``a`` with respect to shape ``b``."""
    dx, dy = a.cx - b.cx, a.cy - b.cy
    if abs(dy) >= abs(dx):
        return "above" if dy < 0 else "below"
    return "left of" if dx < 0 else "right of"


def _np(s):
    return f"{s.color} {s.kind}"


def scene_captions(shapes):
    """Up to five phrasings of the same scene; the first is canonical."""
    if len(shapes) == 1:
        s = _np(shapes[0])
        return [f"a {s}", f"there is a {s}", f"one {s}", f"a single {s}", f"the {s}"]
    a, b = shapes[0], shapes[1]
    rel = relation(a, b)
    tail = f" and a {_np(shapes[2])}" if len(shapes) == 3 else ""
    return [
        f"a {_np(a)} {rel} a {_np(b)}{tail}",
        f"a {_np(b)} {INVERSE[rel]} a {_np(a)}{tail}",
        f"there is a {_np(a)} {rel} a {_np(b)}{tail}",
        f"the {_np(a)} is {rel} the {_np(b)}{tail}",
        f"a {_np(a)} and a {_np(b)}{tail}",
    ]


def parse_caption(text):
    """Recover (color, shape) mentions in order and the relation, if any."""
    words = text.split()
    mentions = []
    for i, w in enumerate(words[:-1]):
        if w in COLORS and words[i + 1] in SHAPES:
            mentions.append((w, words[i + 1]))
    rel = None
    for r in RELATIONS:
        if f" {r} " in f" {text} ":
            rel = r
    return mentions, rel


def _mask(kind, cx, cy, size, yy, xx):
    if kind == "circle":
        return (xx - cx) ** 2 + (yy - cy) ** 2 <= size**2
    if kind == "square":
        return (np.abs(xx - cx) <= size * 0.85) & (np.abs(yy - cy) <= size * 0.85)
    top, bottom = cy - size, cy + size
    frac = (yy - top) / (2 * size)
    return (yy >= top) & (yy <= bottom) & (np.abs(xx - cx) <= frac * size)


def render(scene, size=IMAGE_SIZE):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    img = np.empty((size, size, 3), np.float32)
    img[:] = scene.background
    depth = np.ones((size, size), np.float32)
    for s in sorted(scene.shapes, key=lambda s: -s.depth):
        m = _mask(s.kind, s.cx, s.cy, s.size, yy, xx)
        img[m] = COLORS[s.color]
        depth[m] = s.depth
    return img, depth


def random_scene(rng, size=IMAGE_SIZE):
    n = int(rng.integers(1, 4))
    shapes = []
    sizes = sorted(rng.choice(np.arange(7, 15), size=n, replace=False), reverse=True)
    for k in range(n):
        for _ in range(100):
            r = float(sizes[k])
            cx = float(rng.uniform(r + 1, size - r - 1))
            cy = float(rng.uniform(r + 1, size - r - 1))
            # keep centers well apart so every shape stays visible
            if all((cx - o.cx) ** 2 + (cy - o.cy) ** 2 > (0.8 * (r + o.size)) ** 2 for o in shapes):
                break
        shapes.append(
            Shape(
                kind=SHAPES[int(rng.integers(len(SHAPES)))],
                color=list(COLORS)[int(rng.integers(len(COLORS)))],
                cx=cx,
                cy=cy,
                size=r,
                depth=float(rng.uniform(0.2, 0.7)),
            )
        )
    bg = float(rng.uniform(0.1, 0.35))
    scene = ShapesScene(background=(bg, bg, bg), shapes=shapes)
    scene.captions = scene_captions(shapes)
    return scene


def gen_shapes_dataset(count, seed, captions_per_image=1, size=IMAGE_SIZE):
    """Render ``count`` scenes. Each record carries 1..5 caption strings."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if not 1 <= captions_per_image <= 5:
        raise ValueError("captions_per_image must be in 1..5")
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        scene = random_scene(rng, size)
        img, depth = render(scene, size)
        out.append(ShapesRecord(i, img, depth, scene.captions[:captions_per_image], scene))
    return out
