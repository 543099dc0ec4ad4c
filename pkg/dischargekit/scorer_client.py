import json
import logging
import shlex
import subprocess
import threading
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from dischargekit.config import settings
from dischargekit.decode_engine import LanguageModel
from dischargekit.errors import MalformedResponse, OutOfRangeScore, ProviderUnavailable
from dischargekit.models import EXTERNAL_METRICS, MetricName

log = logging.getLogger(__name__)

# scores this close outside [0, 1] are treated as rounding noise and clamped
SCORE_TOLERANCE = 1e-9


class ProviderProcess:
    """A spawned helper process speaking line-delimited JSON on stdin/stdout.

    One request is in flight at a time; concurrent callers are serialized.
    """

    def __init__(self, command: Union[str, Sequence[str]]):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self._process: Optional[subprocess.Popen] = None
        self._lock = threading.Lock()

    def _ensure_started(self) -> subprocess.Popen:
        if self._process is not None and self._process.poll() is None:
            return self._process
        if not self.command:
            raise ProviderUnavailable("no provider command configured")
        try:
            self._process = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                encoding="utf-8",
                bufsize=1,
            )
        except OSError as e:
            raise ProviderUnavailable(f"cannot start provider {self.command[0]!r}: {e}")
        log.debug("Started provider process %s (pid %s)", self.command, self._process.pid)
        return self._process

    def _make_request(self, payload: Dict[str, Any]) -> Dict[str, Any]:
        """Send one request line, read one response line"""
        with self._lock:
            process = self._ensure_started()
            try:
                process.stdin.write(json.dumps(payload) + "\n")
                process.stdin.flush()
                line = process.stdout.readline()
            except (BrokenPipeError, OSError) as e:
                self.close()
                raise ProviderUnavailable(f"provider connection lost: {e}")
            if not line:
                code = process.poll()
                self.close()
                raise ProviderUnavailable(f"provider exited before responding (exit code {code})")
        log.debug("Provider response: %s", line.strip()[:200])
        try:
            response = json.loads(line)
        except json.JSONDecodeError as e:
            raise MalformedResponse(f"provider response is not JSON: {e.msg}")
        if not isinstance(response, dict):
            raise MalformedResponse("provider response must be a JSON object")
        return response

    def close(self):
        process, self._process = self._process, None
        if process is None:
            return
        try:
            if process.stdin:
                process.stdin.close()
            process.wait(timeout=settings.provider_timeout)
        except (OSError, subprocess.TimeoutExpired):
            process.kill()
        finally:
            if process.stdout:
                process.stdout.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class ExternalScorer(ProviderProcess):
    """Model-based metrics (BERTScore, AlignScore, MEDCON) computed out of process"""

    def score_batch(self, metric: MetricName, pairs: Sequence[Tuple[str, str]]) -> List[float]:
        """Score a batch atomically: either every pair gets a score or an error is raised"""
        metric = MetricName(metric)
        request = {"metric": metric.value, "pairs": [{"hyp": h, "ref": r} for h, r in pairs]}
        response = self._make_request(request)
        scores = response.get("scores")
        if not isinstance(scores, list) or len(scores) != len(pairs):
            raise MalformedResponse(
                f"{metric.value}: expected {len(pairs)} scores, got {scores if not isinstance(scores, list) else len(scores)}"
            )
        checked = []
        for score in scores:
            if isinstance(score, bool) or not isinstance(score, (int, float)):
                raise MalformedResponse(f"{metric.value}: non-numeric score {score!r}")
            if score < -SCORE_TOLERANCE or score > 1 + SCORE_TOLERANCE:
                raise OutOfRangeScore(f"{metric.value}: score {score} outside [0, 1]")
            checked.append(min(1.0, max(0.0, float(score))))
        return checked


def external_metric(
    provider: ExternalScorer,
    metric_name: MetricName,
    pairs: Sequence[Tuple[str, str]],
) -> List[float]:
    return provider.score_batch(metric_name, pairs)


def default_providers(command: Optional[str] = None) -> Dict[MetricName, ExternalScorer]:
    """One shared scorer process for every model-based metric, if configured"""
    command = command if command is not None else settings.scorer_cmd
    if not command:
        return {}
    scorer = ExternalScorer(command)
    return {metric: scorer for metric in EXTERNAL_METRICS}


class ProcessLanguageModel(LanguageModel):
    """LanguageModel backed by a provider process (e.g. a real model server)"""

    def __init__(self, process: ProviderProcess):
        self.process = process
        info = process._make_request({"op": "info"})
        try:
            self.vocab_size = int(info["vocab_size"])
            self.eos_id = int(info["eos"])
        except (KeyError, TypeError, ValueError):
            raise MalformedResponse("provider info must carry vocab_size and eos")

    def _vector(self, payload: Dict[str, Any], key: str) -> np.ndarray:
        response = self.process._make_request(payload)
        try:
            return np.asarray(response[key], dtype=np.float64)
        except (KeyError, TypeError, ValueError):
            raise MalformedResponse(f"provider response lacks a numeric {key!r} vector")

    def next_logits(self, prefix: Sequence[int]) -> np.ndarray:
        return self._vector({"op": "logits", "prefix": [int(t) for t in prefix]}, "logits")

    def token_repr(self, token_id: int) -> np.ndarray:
        return self._vector({"op": "repr", "token": int(token_id)}, "repr")
