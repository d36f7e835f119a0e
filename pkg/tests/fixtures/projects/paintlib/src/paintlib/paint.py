"""Paint styles used to fill shapes on a canvas."""


class Paint:
    """Base type for everything a canvas can fill with."""

    def describe(self) -> str:
        raise NotImplementedError


class Color(Paint):
    def __init__(self, r: int, g: int, b: int, alpha: int = 255):
        for v in (r, g, b, alpha):
            if not 0 <= v <= 255:
                raise ValueError(f"color component out of range: {v}")
        self.rgba = (r, g, b, alpha)

    def describe(self) -> str:
        return "solid(#%02x%02x%02x)" % self.rgba[:3]


class GradientPaint(Paint):
    """Two-color gradient between two points."""

    def __init__(self, start, start_color: Color, end, end_color: Color):
        if start == end:
            raise ValueError("gradient start and end must differ")
        self.start = start
        self.end = end
        self.colors = (start_color, end_color)

    def describe(self) -> str:
        return "gradient(2 stops)"


class MultipleGradientPaint(Paint):
    def __init__(self, fractions, colors):
        if len(fractions) != len(colors):
            raise ValueError("fractions and colors differ in length")
        if len(fractions) < 2:
            raise ValueError("at least two stops are required")
        if list(fractions) != sorted(fractions) or len(set(fractions)) != len(fractions):
            raise ValueError("fractions must be strictly increasing")
        self.fractions = tuple(fractions)
        self.colors = tuple(colors)

    def stops(self) -> int:
        return len(self.fractions)


class LinearGradientPaint(MultipleGradientPaint):
    def __init__(self, start, end, fractions, colors):
        super().__init__(fractions, colors)
        self.start = start
        self.end = end

    def describe(self) -> str:
        return f"linear({self.stops()} stops)"


class RadialGradientPaint(MultipleGradientPaint):
    def __init__(self, center, radius: float, fractions, colors):
        if radius <= 0:
            raise ValueError("radius must be positive")
        super().__init__(fractions, colors)
        self.center = center
        self.radius = radius

    def describe(self) -> str:
        return f"radial({self.stops()} stops, r={self.radius:g})"


class TexturePaint(Paint):
    def __init__(self, image: str, anchor):
        self.image = image
        self.anchor = anchor

    def describe(self) -> str:
        return f"texture({self.image})"
