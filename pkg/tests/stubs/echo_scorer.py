"""Scores every pair 0.5."""
import json
import sys

for line in sys.stdin:
    request = json.loads(line)
    sys.stdout.write(json.dumps({"scores": [0.5] * len(request["pairs"])}) + "\n")
    sys.stdout.flush()
