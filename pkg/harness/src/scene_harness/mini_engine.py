"""Minimal built-in scene engine.

Implements the slice of the animation API that TeachingScene-derived
programs use, with real execution semantics and real video output: play()
and wait() advance a frame clock and every frame is rasterized through
OpenCV. It exists so the harness can run scene programs in environments
where the pinned engine is not installable; it is explicitly not a
rendering-fidelity replacement.

``from manim import *`` resolves to this module when the worker selects the
builtin engine (it injects the module into sys.modules before the scene file
executes).
"""

from __future__ import annotations

import numpy as np

FRAME_HEIGHT = 8.0
FRAME_WIDTH = FRAME_HEIGHT * 16.0 / 9.0

ORIGIN = np.array([0.0, 0.0, 0.0])
UP = np.array([0.0, 1.0, 0.0])
DOWN = np.array([0.0, -1.0, 0.0])
LEFT = np.array([-1.0, 0.0, 0.0])
RIGHT = np.array([1.0, 0.0, 0.0])

WHITE = "#FFFFFF"
BLACK = "#000000"
RED = "#FC6255"
GREEN = "#83C167"
BLUE = "#58C4DD"
YELLOW = "#FFFF00"
GREY = "#888888"
GRAY = GREY

__version__ = "builtin-0.1"


def _to_point(value) -> np.ndarray:
    arr = np.asarray(value, dtype=float).reshape(-1)
    if arr.size == 2:
        arr = np.append(arr, 0.0)
    return arr[:3].copy()


def color_to_bgr(color) -> tuple[int, int, int]:
    text = str(color)
    if text.startswith("#") and len(text) >= 7:
        r, g, b = (int(text[k : k + 2], 16) for k in (1, 3, 5))
        return (b, g, r)
    return (255, 255, 255)


class Mobject:
    """Positioned, scalable drawable; subclasses define their raster shape."""

    def __init__(self, color=WHITE, **kwargs):
        self.color = color
        self.position = ORIGIN.copy()
        self.scale_factor = 1.0
        self.opacity = 1.0

    # chainable transforms, mirroring the expected API
    def scale(self, factor):
        self.scale_factor *= factor
        return self

    def move_to(self, point):
        self.position = _to_point(point)
        return self

    def shift(self, delta):
        self.position = self.position + _to_point(delta)
        return self

    def to_edge(self, direction=LEFT, buff=0.5):
        direction = _to_point(direction)
        x, y = self.position[0], self.position[1]
        half_w, half_h = self.half_extent()
        if direction[0] < 0:
            x = -FRAME_WIDTH / 2 + buff + half_w
        elif direction[0] > 0:
            x = FRAME_WIDTH / 2 - buff - half_w
        if direction[1] > 0:
            y = FRAME_HEIGHT / 2 - buff - half_h
        elif direction[1] < 0:
            y = -FRAME_HEIGHT / 2 + buff + half_h
        self.position = np.array([x, y, 0.0])
        return self

    def next_to(self, other, direction=RIGHT, buff=0.25):
        direction = _to_point(direction)
        offset = direction * (sum(other.half_extent()) / 2 + buff + sum(self.half_extent()) / 2)
        self.position = other.position + offset
        return self

    def set_color(self, color):
        self.color = color
        return self

    def set_opacity(self, value):
        self.opacity = float(value)
        return self

    def get_center(self):
        return self.position.copy()

    def half_extent(self) -> tuple[float, float]:
        return (0.5 * self.scale_factor, 0.5 * self.scale_factor)

    def draw(self, canvas) -> None:  # pragma: no cover - overridden
        pass


class Dot(Mobject):
    def __init__(self, point=ORIGIN, radius=0.08, color=WHITE, **kwargs):
        super().__init__(color=color, **kwargs)
        self.position = _to_point(point)
        self.radius = radius

    def half_extent(self):
        r = self.radius * self.scale_factor
        return (r, r)

    def draw(self, canvas):
        canvas.circle(self.position, self.radius * self.scale_factor, self.color, filled=True)


class Circle(Mobject):
    def __init__(self, radius=1.0, color=WHITE, **kwargs):
        super().__init__(color=color, **kwargs)
        self.radius = radius

    def half_extent(self):
        r = self.radius * self.scale_factor
        return (r, r)

    def draw(self, canvas):
        canvas.circle(self.position, self.radius * self.scale_factor, self.color, filled=False)


class Square(Mobject):
    def __init__(self, side_length=2.0, color=WHITE, **kwargs):
        super().__init__(color=color, **kwargs)
        self.side_length = side_length

    def half_extent(self):
        h = self.side_length * self.scale_factor / 2
        return (h, h)

    def draw(self, canvas):
        canvas.rectangle(self.position, *self.half_extent(), self.color)


class Rectangle(Mobject):
    def __init__(self, width=4.0, height=2.0, color=WHITE, **kwargs):
        super().__init__(color=color, **kwargs)
        self.width = width
        self.height = height

    def half_extent(self):
        return (self.width * self.scale_factor / 2, self.height * self.scale_factor / 2)

    def draw(self, canvas):
        canvas.rectangle(self.position, *self.half_extent(), self.color)


class Line(Mobject):
    def __init__(self, start=LEFT, end=RIGHT, color=WHITE, **kwargs):
        super().__init__(color=color, **kwargs)
        self.start = _to_point(start)
        self.end = _to_point(end)

    def draw(self, canvas):
        offset = self.position
        canvas.line(self.start * self.scale_factor + offset,
                    self.end * self.scale_factor + offset, self.color)


class Arrow(Line):
    pass


class Text(Mobject):
    def __init__(self, text="", font_size=48, color=WHITE, **kwargs):
        super().__init__(color=color, **kwargs)
        self.text = str(text)
        self.font_size = font_size

    def half_extent(self):
        width = 0.018 * self.font_size * self.scale_factor * max(1, len(self.text)) / 2
        height = 0.02 * self.font_size * self.scale_factor
        return (width, height)

    def draw(self, canvas):
        canvas.text(self.position, self.text, self.font_size * self.scale_factor, self.color)


class MathTex(Text):
    """Formula text; rendered as plain text by this engine."""


class Tex(Text):
    pass


class ImageMobject(Mobject):
    def __init__(self, filename, **kwargs):
        super().__init__(**kwargs)
        self.filename = str(filename)

    def half_extent(self):
        return (self.scale_factor, self.scale_factor)

    def draw(self, canvas):
        canvas.image(self.position, self.filename, self.scale_factor)


class VGroup(Mobject):
    def __init__(self, *members, **kwargs):
        super().__init__(**kwargs)
        self.members = list(members)

    def add(self, *members):
        self.members.extend(members)
        return self

    def __iter__(self):
        return iter(self.members)

    def __getitem__(self, index):
        return self.members[index]

    def scale(self, factor):
        super().scale(factor)
        center = self.get_center()
        for member in self.members:
            member.scale(factor)
            member.position = center + (member.position - center) * factor
        return self

    def move_to(self, point):
        delta = _to_point(point) - self.get_center()
        return self.shift(delta)

    def shift(self, delta):
        delta = _to_point(delta)
        self.position = self.position + delta
        for member in self.members:
            member.shift(delta)
        return self

    def get_center(self):
        if not self.members:
            return self.position.copy()
        return np.mean([m.position for m in self.members], axis=0)

    def half_extent(self):
        if not self.members:
            return (0.1, 0.1)
        center = self.get_center()
        spans = [
            (abs(m.position[0] - center[0]) + m.half_extent()[0],
             abs(m.position[1] - center[1]) + m.half_extent()[1])
            for m in self.members
        ]
        return (max(s[0] for s in spans), max(s[1] for s in spans))

    def arrange(self, direction=DOWN, aligned_edge=None, buff=0.25):
        direction = _to_point(direction)
        cursor = np.array([0.0, 0.0, 0.0])
        for member in self.members:
            half_w, half_h = member.half_extent()
            step = np.array([half_w * 2 + buff, half_h * 2 + buff, 0.0]) * np.abs(direction)
            member.position = cursor.copy()
            cursor = cursor + direction * step
        if aligned_edge is not None:
            edge = _to_point(aligned_edge)
            if edge[0] != 0:
                target = min(
                    (m.position[0] - edge[0] * m.half_extent()[0] for m in self.members),
                    default=0.0,
                )
                for member in self.members:
                    member.position[0] = target + edge[0] * member.half_extent()[0]
        center = self.get_center()
        for member in self.members:
            member.position = member.position - center
        self.position = ORIGIN.copy()
        return self

    def draw(self, canvas):
        for member in self.members:
            member.draw(canvas)


# --- animations ------------------------------------------------------------------


class Animation:
    adds = True
    removes = False

    def __init__(self, mobject, run_time=None, **kwargs):
        self.mobject = mobject
        self.run_time = run_time


class FadeIn(Animation):
    pass


class Create(Animation):
    pass


class Write(Animation):
    pass


class DrawBorderThenFill(Animation):
    pass


class GrowFromCenter(Animation):
    pass


class FadeOut(Animation):
    adds = False
    removes = True


class Uncreate(FadeOut):
    pass


class Indicate(Animation):
    adds = False


class Flash(Animation):
    adds = False


class Wiggle(Animation):
    adds = False


class Transform(Animation):
    """Replaces the source with the target in the visible set."""

    def __init__(self, mobject, target, **kwargs):
        super().__init__(mobject, **kwargs)
        self.target = target


class ReplacementTransform(Transform):
    pass


# --- scene ------------------------------------------------------------------------


class _Camera:
    def __init__(self):
        self.background_color = BLACK
        self.frame_width = FRAME_WIDTH
        self.frame_height = FRAME_HEIGHT


class _Canvas:
    """Rasterizer: scene units to pixels through OpenCV primitives."""

    def __init__(self, width_px: int, height_px: int, background: str):
        import cv2

        self.cv2 = cv2
        self.width_px = width_px
        self.height_px = height_px
        self.background = background
        self.frame = None
        self._image_cache: dict[str, np.ndarray] = {}

    def begin_frame(self):
        self.frame = np.zeros((self.height_px, self.width_px, 3), dtype=np.uint8)
        self.frame[:] = color_to_bgr(self.background)

    def _px(self, point) -> tuple[int, int]:
        x = int((point[0] + FRAME_WIDTH / 2) / FRAME_WIDTH * self.width_px)
        y = int((FRAME_HEIGHT / 2 - point[1]) / FRAME_HEIGHT * self.height_px)
        return x, y

    def _units(self, value: float) -> int:
        return max(1, int(value / FRAME_HEIGHT * self.height_px))

    def circle(self, center, radius, color, filled):
        self.cv2.circle(
            self.frame, self._px(center), self._units(radius), color_to_bgr(color),
            -1 if filled else 2,
        )

    def rectangle(self, center, half_w, half_h, color):
        cx, cy = self._px(center)
        dw, dh = self._units(half_w), self._units(half_h)
        self.cv2.rectangle(self.frame, (cx - dw, cy - dh), (cx + dw, cy + dh),
                           color_to_bgr(color), 2)

    def line(self, start, end, color):
        self.cv2.line(self.frame, self._px(start), self._px(end), color_to_bgr(color), 2)

    def text(self, center, content, font_size, color):
        scale = max(0.3, font_size / 56.0)
        size, _ = self.cv2.getTextSize(content, self.cv2.FONT_HERSHEY_SIMPLEX, scale, 1)
        cx, cy = self._px(center)
        origin = (cx - size[0] // 2, cy + size[1] // 2)
        self.cv2.putText(self.frame, content, origin, self.cv2.FONT_HERSHEY_SIMPLEX,
                         scale, color_to_bgr(color), 1, self.cv2.LINE_AA)

    def image(self, center, filename, scale_factor):
        if filename not in self._image_cache:
            loaded = self.cv2.imread(filename)
            if loaded is None:
                raise FileNotFoundError(f"image asset not readable: {filename}")
            self._image_cache[filename] = loaded
        img = self._image_cache[filename]
        target_h = self._units(2.0 * scale_factor)
        target_w = max(1, int(img.shape[1] * target_h / img.shape[0]))
        resized = self.cv2.resize(img, (target_w, target_h))
        cx, cy = self._px(center)
        x0, y0 = cx - target_w // 2, cy - target_h // 2
        x1, y1 = x0 + target_w, y0 + target_h
        fx0, fy0 = max(0, x0), max(0, y0)
        fx1, fy1 = min(self.width_px, x1), min(self.height_px, y1)
        if fx1 > fx0 and fy1 > fy0:
            self.frame[fy0:fy1, fx0:fx1] = resized[fy0 - y0 : fy1 - y0, fx0 - x0 : fx1 - x0]


QUALITY_PRESETS = {
    "low": (854, 480, 15),
    "medium": (1280, 720, 30),
    "high": (1920, 1080, 60),
}


class Scene:
    """Drives construct() and writes one mp4 for the whole scene."""

    def __init__(self):
        self.camera = _Camera()
        self.mobjects: list[Mobject] = []
        self._canvas: _Canvas | None = None
        self._writer = None
        self._fps = 15
        self.frames_written = 0
        self.output_path: str | None = None

    # -- construction-facing API ---------------------------------------

    def add(self, *mobjects):
        for mobject in mobjects:
            if mobject not in self.mobjects:
                self.mobjects.append(mobject)
        return self

    def remove(self, *mobjects):
        for mobject in mobjects:
            if mobject in self.mobjects:
                self.mobjects.remove(mobject)
        return self

    def play(self, *animations, run_time=1.0, **kwargs):
        for animation in animations:
            if isinstance(animation, Transform):
                self.remove(animation.mobject)
                self.add(animation.target)
            elif animation.removes:
                self.remove(animation.mobject)
            elif animation.adds:
                self.add(animation.mobject)
            if animation.run_time:
                run_time = max(run_time, animation.run_time)
        self._emit(run_time)

    def wait(self, duration=1.0):
        self._emit(duration)

    # -- rendering ---------------------------------------------------------

    def _emit(self, seconds: float):
        if self._writer is None:
            return
        frame_count = max(1, round(seconds * self._fps))
        self._canvas.background = self.camera.background_color
        for _ in range(frame_count):
            self._canvas.begin_frame()
            for mobject in self.mobjects:
                mobject.draw(self._canvas)
            self._writer.write(self._canvas.frame)
            self.frames_written += 1

    def render_to(self, output_path: str, quality: str = "low") -> float:
        import cv2

        width, height, fps = QUALITY_PRESETS.get(quality, QUALITY_PRESETS["low"])
        self._fps = fps
        self._canvas = _Canvas(width, height, self.camera.background_color)
        self._writer = cv2.VideoWriter(
            output_path, cv2.VideoWriter_fourcc(*"mp4v"), fps, (width, height)
        )
        if not self._writer.isOpened():
            raise RuntimeError(f"cannot open video writer for {output_path}")
        try:
            self.construct()
            if self.frames_written == 0:
                self._emit(1.0 / fps)
        finally:
            self._writer.release()
            self._writer = None
        self.output_path = output_path
        return self.frames_written / fps

    def construct(self):  # pragma: no cover - scene subclasses override
        pass
