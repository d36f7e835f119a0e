"""A tiny vector canvas that records fill operations on document pages."""

from .paint import Color, Paint


class Page:
    def __init__(self, number: int):
        self.number = number
        self.operations = []


class Document:
    def __init__(self):
        self.pages = []

    def newPage(self) -> Page:
        page = Page(len(self.pages) + 1)
        self.pages.append(page)
        return page


class Canvas:
    def __init__(self, document: Document):
        self.document = document
        self.page = document.newPage()
        self.paint = Color(0, 0, 0)

    def setPaint(self, paint: Paint) -> None:
        if paint is None:
            raise ValueError("paint must not be None")
        if not isinstance(paint, Paint):
            raise TypeError(f"unsupported paint: {type(paint).__name__}")
        self.paint = paint

    def fillRect(self, x: float, y: float, width: float, height: float) -> None:
        self._fill("rect", x, y, width, height)

    def fillOval(self, x: float, y: float, width: float, height: float) -> None:
        self._fill("oval", x, y, width, height)

    def _fill(self, shape: str, x, y, width, height) -> None:
        if width <= 0 or height <= 0:
            raise ValueError("shape must have a positive size")
        self.page.operations.append((shape, (x, y, width, height), self.paint.describe()))
