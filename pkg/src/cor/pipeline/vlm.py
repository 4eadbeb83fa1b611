"""Validator clients: an HTTP wire client and a scripted mock, plus prompt and reply handling.

Wire protocol: POST a JSON body ``{"prompt": str, "images": [base64 PNG, ...]}``
to the endpoint; the reply is JSON ``{"text": str}``.
"""

from __future__ import annotations

import base64
import io
import json
import os
import re
import threading
import time
import urllib.error
import urllib.request
from importlib import resources
from typing import Callable, Protocol, Sequence

import numpy as np
from PIL import Image

from cor.errors import InputError, RetryExhausted, VlmFormatError, VlmProtocolError

ENDPOINT_ENV = "COR_VLM_ENDPOINT"
PROMPTS = {
    2: "step2_quality.txt",
    6: "step6_distinguish.txt",
    7: "step7_pair.txt",
    8: "step8_text.txt",
    9: "step9_verify.txt",
    10: "step10_false_match.txt",
}
SLOTS = ("cat_name", "ins_len", "retrieval_text", "target_cat")
_SLOT = re.compile(r"\{(" + "|".join(SLOTS) + r")\}")


def load_template(step: int) -> str:
    return resources.files("cor.pipeline").joinpath("prompts", PROMPTS[step]).read_text(encoding="utf-8")


def render_prompt(template: str, **slots) -> str:
    """Fill named placeholders; braces that are not known slots are left alone."""

    def sub(m):
        name = m.group(1)
        if name not in slots:
            raise InputError(f"prompt needs a value for {{{name}}}")
        return str(slots[name])

    return _SLOT.sub(sub, template)


def parse_binary(reply: str) -> bool:
    text = reply.strip()
    if text not in ("0", "1"):
        raise VlmProtocolError(f"expected '1' or '0', got {reply!r}")
    return text == "1"


_CHANGES = re.compile(r"^\[\s*(\(.*\))\s*\]$", re.S)


def parse_changes(reply: str) -> list[str]:
    """Parse ``[(change1), (change2), ...]`` into its phrases."""
    m = _CHANGES.match(reply.strip())
    if not m:
        raise VlmFormatError(f"reply is not a bracketed list of changes: {reply!r}")
    items = re.findall(r"\(([^()]*)\)", m.group(1))
    rest = re.sub(r"\([^()]*\)", "", m.group(1))
    if not items or rest.replace(",", "").strip():
        raise VlmFormatError(f"malformed change list: {reply!r}")
    return [i.strip() for i in items]


def encode_png(image: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(image, dtype=np.uint8)).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


class VlmClient(Protocol):
    max_concurrency: int

    def render(self, template: str, **slots) -> str: ...

    def ask(self, images: Sequence[np.ndarray], prompt: str, meta: dict | None = None) -> str: ...


class _Renders:
    def render(self, template: str, **slots) -> str:
        return render_prompt(template, **slots)


class HttpVlmClient(_Renders):
    def __init__(
        self,
        endpoint: str | None = None,
        timeout: float = 60.0,
        retries: int = 3,
        backoff: float = 0.5,
        max_concurrency: int = 4,
        transport: Callable[[str, bytes, float], bytes] | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.endpoint = endpoint or os.environ.get(ENDPOINT_ENV)
        if not self.endpoint:
            raise InputError(f"no validator endpoint; set {ENDPOINT_ENV}")
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self.max_concurrency = max_concurrency
        self._transport = transport or self._post
        self._sleep = sleep

    @staticmethod
    def _post(url: str, body: bytes, timeout: float) -> bytes:
        req = urllib.request.Request(url, data=body, headers={"Content-Type": "application/json"}, method="POST")
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            return resp.read()

    def ask(self, images, prompt: str, meta: dict | None = None) -> str:
        body = json.dumps({"prompt": prompt, "images": [encode_png(i) for i in images]}).encode()
        last = None
        for attempt in range(self.retries + 1):
            try:
                raw = self._transport(self.endpoint, body, self.timeout)
                break
            except (urllib.error.URLError, TimeoutError, ConnectionError, OSError) as e:
                last = e
                if attempt < self.retries:
                    self._sleep(self.backoff * 2**attempt)
        else:
            raise RetryExhausted(f"validator unreachable after {self.retries + 1} attempts: {last}")
        try:
            reply = json.loads(raw)
            return str(reply["text"])
        except (ValueError, KeyError, TypeError) as e:
            raise VlmProtocolError(f"malformed validator response: {raw[:200]!r}") from e


class ScriptedVlm(_Renders):
    """Deterministic stand-in: replies come from a table keyed by ``(step, key)``.

    ``meta`` must carry ``step`` and ``key``. Unscripted calls fall back to the
    per-step default, then to ``fallback`` (a callable of meta) if given.
    Every call is recorded in ``calls`` as ``(step, key)``.
    """

    def __init__(
        self,
        script: dict | None = None,
        defaults: dict | None = None,
        fallback: Callable[[dict], str] | None = None,
        max_concurrency: int = 4,
    ):
        self.script = {}
        for k, v in (script or {}).items():
            step, key = k if isinstance(k, tuple) else k.split(":", 1)
            self.script[(int(step), str(key))] = v
        self.defaults = {int(k): v for k, v in (defaults or {}).items()}
        self.fallback = fallback
        self.max_concurrency = max_concurrency
        self.calls: list[tuple[int, str]] = []
        self._lock = threading.Lock()

    @classmethod
    def from_json(cls, path) -> "ScriptedVlm":
        doc = json.loads(open(path, encoding="utf-8").read())
        return cls(doc.get("script", {}), doc.get("defaults", {}))

    def ask(self, images, prompt: str, meta: dict | None = None) -> str:
        if not meta or "step" not in meta or "key" not in meta:
            raise InputError("scripted validator needs meta with step and key")
        step, key = int(meta["step"]), str(meta["key"])
        with self._lock:
            self.calls.append((step, key))
        if (step, key) in self.script:
            return self.script[(step, key)]
        if step in self.defaults:
            return self.defaults[step]
        if self.fallback is not None:
            return self.fallback(meta)
        raise InputError(f"no scripted reply for step {step} key {key!r}")
