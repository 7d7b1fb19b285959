"""Headless-browser chart renderer: ``python -m figreport.render in.html out.png``.

Prints browser console messages on stdout. Exits with status 3 when Playwright
is not installed, 1 on any rendering failure.
"""

from __future__ import annotations

import sys
from pathlib import Path


def render(html_path: Path, png_path: Path, width: int = 800, wait_ms: int = 1500) -> list[str]:
    from playwright.sync_api import sync_playwright

    messages: list[str] = []
    with sync_playwright() as p:
        browser = p.chromium.launch()
        try:
            page = browser.new_page(viewport={"width": width, "height": 600})
            page.on("console", lambda msg: messages.append(f"{msg.type}: {msg.text}"))
            page.on("pageerror", lambda err: messages.append(f"pageerror: {err}"))
            page.goto(html_path.resolve().as_uri())
            page.wait_for_timeout(wait_ms)
            page.screenshot(path=str(png_path), full_page=True)
        finally:
            browser.close()
    return messages


def main(argv: list[str] | None = None) -> int:
    args = sys.argv[1:] if argv is None else argv
    if len(args) != 2:
        print("usage: python -m figreport.render in.html out.png", file=sys.stderr)
        return 2
    try:
        import playwright  # noqa: F401
    except ImportError:
        print("playwright is not installed (pip install 'artifact[render]')", file=sys.stderr)
        return 3
    try:
        messages = render(Path(args[0]), Path(args[1]))
    except Exception as exc:  # noqa: BLE001 - report any browser failure to the caller
        print(f"render failed: {exc}", file=sys.stderr)
        return 1
    print("\n".join(messages))
    return 0


if __name__ == "__main__":
    sys.exit(main())
