"""Serves a fixed 3-token model over the provider protocol."""
import json
import sys

LOGITS = [[0.0, 2.0, 1.0], [3.0, 0.0, 1.0], [0.0, 0.0, 0.0]]
EMBEDDINGS = [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]

for line in sys.stdin:
    request = json.loads(line)
    if request["op"] == "info":
        response = {"vocab_size": 3, "eos": 0}
    elif request["op"] == "logits":
        response = {"logits": LOGITS[request["prefix"][-1]]}
    else:
        response = {"repr": EMBEDDINGS[request["token"]]}
    sys.stdout.write(json.dumps(response) + "\n")
    sys.stdout.flush()
