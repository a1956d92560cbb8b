"""Template generator for Java method / JavaDoc pairs.

Produces raw (untokenized) pairs shaped like accessor-heavy Java code so the
full pipeline can be exercised without the large public corpus.
"""

from __future__ import annotations

import numpy as np

NOUNS = [
    "name", "value", "child", "parent", "node", "index", "count", "size", "color", "depth",
    "rate", "user", "account", "order", "item", "price", "total", "message", "text", "label",
    "width", "height", "status", "state", "file", "path", "buffer", "stream", "key", "entry",
    "listener", "handler", "session", "token", "timeout", "limit", "offset", "score", "level",
    "title", "owner", "source", "target", "record", "request", "response", "header", "port",
]
ADJECTIVES = [
    "maximum", "minimum", "current", "default", "total", "selected", "active", "next",
    "previous", "first", "last", "local", "remote", "initial", "final", "oxygen", "primary",
]
TYPES = ["String", "int", "long", "double", "boolean", "Node", "Object", "PartVO", "Color", "File"]


def _camel(words) -> str:
    return words[0] + "".join(w.capitalize() for w in words[1:])


def _pascal(words) -> str:
    return "".join(w.capitalize() for w in words)


def _phrase(rng) -> list:
    noun = [NOUNS[rng.integers(len(NOUNS))]]
    if rng.random() < 0.6:
        noun = [ADJECTIVES[rng.integers(len(ADJECTIVES))]] + noun
    if rng.random() < 0.3:
        noun = noun + [NOUNS[rng.integers(len(NOUNS))]]
    return noun


def _pair(rng) -> tuple:
    words = _phrase(rng)
    field = _camel(words)
    prop = _pascal(words)
    human = " ".join(words)
    jtype = TYPES[rng.integers(len(TYPES))]
    owner = NOUNS[rng.integers(len(NOUNS))]
    kind = rng.integers(8)
    if kind == 0:
        return (f"public {jtype} get{prop}() {{ return {field}; }}",
                f"Gets the {human}.")
    if kind == 1:
        return (f"public void set{prop}({jtype} value) {{ this.{field} = value; }}",
                f"Sets the {human}.")
    if kind == 2:
        return (f"public boolean is{prop}() {{ return {field} != null; }}",
                f"Returns true if the {human} is set.")
    if kind == 3:
        return (f"public void add{prop}({jtype} item) {{ {field}List.add(item); }}",
                f"Adds a {human} to the {owner} list.")
    if kind == 4:
        return (f"public void remove{prop}({jtype} item) {{ {field}List.remove(item); }}",
                f"Removes the given {human} from the {owner}.")
    if kind == 5:
        return (f"public void reset{prop}() {{ {field} = DEFAULT_{'_'.join(w.upper() for w in words)}; }}",
                f"Resets the {human} to its default value.")
    if kind == 6:
        return (f"public int count{prop}() {{ return {field}List.size(); }}",
                f"Returns the number of {human} entries.")
    return (f"public {jtype} find{prop}By{owner.capitalize()}(String {owner}) "
            f"{{ for ({jtype} x : {field}List) {{ if (x.matches({owner})) return x; }} return null; }}",
            f"Finds the {human} for the given {owner}.")


def generate_pairs(n: int, seed: int = 0) -> list:
    """``n`` raw ``(method_source, comment_source)`` pairs, deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    return [_pair(rng) for _ in range(n)]
