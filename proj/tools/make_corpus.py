"""Writes data/corpus.txt from the Python documentation topics bundled with CPython."""
import re
import sys

from pydoc_data.topics import topics

out = sys.argv[1] if len(sys.argv) > 1 else "data/corpus.txt"
text = "\n".join(topics[k] for k in sorted(topics))
text = "".join(c for c in text if 32 <= ord(c) < 127 or c == "\n")
text = re.sub(r"\n{3,}", "\n\n", text)[:200000]
with open(out, "w") as f:
    f.write(text)
print(len(text), "characters,", len(set(text)), "symbols")
