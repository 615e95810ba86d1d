#!/usr/bin/env python3
# Copyright 2026 The Crashaccum Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#      https://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Generates the synthetic crash corpus used by the CLI and acceptance tests.

Wave 1 holds 30 raw traces drawn from 6 planted stack shapes (5 per shape,
one of them an address-only duplicate). Wave 2 holds 12 traces: duplicates,
inner and outer variants of existing shapes, and two new shapes.

The script recomputes the weighted-LCS distance on its own, checks that the
planted shapes separate at the threshold, simulates hierarchical-level
accumulation of wave 2, and writes the expected outcome to expected.json.
"""

import itertools
import json
import os
import random
import shutil

THRESHOLD = 0.3
DECAY = 0.9
HERE = os.path.dirname(os.path.abspath(__file__))
OUT = os.path.join(HERE, "corpus")
IGNORED = ("__asan", "__ubsan", "__sanitizer", "abort", "raise", "__libc")

rng = random.Random(20240917)


def base_shape(name):
    return [f"{name}_crash", f"{name}_read", f"{name}_decode", f"{name}_parse",
            f"{name}_load", "dispatch_input", "main", "_start"]


def variant(frames, position, tag):
    out = list(frames)
    out[position] = f"{out[position]}_{tag}"
    return out


def similarity(a, b):
    if a == b:
        return 1.0
    n, m = len(a), len(b)
    w = [DECAY ** i for i in range(max(n, m))]
    best = [[0.0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            v = max(best[i - 1][j], best[i][j - 1])
            if a[i - 1] == b[j - 1]:
                v = max(v, best[i - 1][j - 1] + min(w[i - 1], w[j - 1]))
            best[i][j] = v
    return best[n][m] / max(sum(w[:n]), sum(w[:m]))


def dist(a, b):
    return 1.0 - similarity(a, b)


def diameter(members):
    return max((dist(x, y) for x, y in itertools.combinations(members, 2)), default=0.0)


def link(c1, c2):
    return max(dist(x, y) for x in c1 for y in c2)


def complete_linkage(atoms):
    """Naive complete linkage over lists of traces; returns index groups."""
    groups = [[i] for i in range(len(atoms))]
    while len(groups) > 1:
        best = None
        for (gi, a), (gj, b) in itertools.combinations(enumerate(groups), 2):
            h = link([t for i in a for t in atoms[i]], [t for i in b for t in atoms[i]])
            key = (h, min(a), min(b))
            if best is None or key < best[0]:
                best = (key, gi, gj)
        if best[0][0] >= THRESHOLD:
            break
        _, gi, gj = best
        groups[gi] = sorted(groups[gi] + groups[gj])
        del groups[gj]
    return groups


def sanitizer_text(frames, src):
    lines = ["==4242==ERROR: AddressSanitizer: heap-buffer-overflow on address 0x602000000011",
             "READ of size 4 at 0x602000000011 thread T0",
             f"    #0 0x{rng.randrange(1 << 20, 1 << 24):x} in __asan_memcpy (/out/fuzzer+0x{rng.randrange(1 << 16, 1 << 20):x})"]
    for k, fn in enumerate(frames, start=1):
        addr = rng.randrange(1 << 20, 1 << 24)
        lines.append(f"    #{k} 0x{addr:x} in {fn} /src/{src}/{fn}.c:{10 + 3 * k}:{k + 2}")
    lines.append("SUMMARY: AddressSanitizer: heap-buffer-overflow")
    return "\n".join(lines) + "\n"


def gdb_text(frames, src):
    lines = [f"#0  0x00007ffff7a4{rng.randrange(0, 1 << 12):03x} in raise () from /lib/x86_64-linux-gnu/libc.so.6",
             f"#1  0x00007ffff7a4{rng.randrange(0, 1 << 12):03x} in abort () from /lib/x86_64-linux-gnu/libc.so.6"]
    for k, fn in enumerate(frames, start=2):
        addr = rng.randrange(1 << 36, 1 << 40)
        lines.append(f"#{k}  0x{addr:016x} in {fn} (ctx=0x0, n={k}) at /src/{src}/{fn}.c:{20 + k}")
    return "\n".join(lines) + "\n"


def render(name, frames, style):
    return sanitizer_text(frames, name) if style == "asan" else gdb_text(frames, name)


def main():
    shapes = {s: base_shape(s) for s in ["alpha", "bravo", "charlie", "delta", "echo", "foxtrot"]}
    styles = {s: ("asan" if i % 2 == 0 else "gdb") for i, s in enumerate(shapes)}

    wave1 = {}
    for s, frames in shapes.items():
        wave1[f"{s}_v0"] = (s, frames)
        wave1[f"{s}_v0_rerun"] = (s, frames)
        wave1[f"{s}_v1"] = (s, variant(frames, 5, "v1"))
        wave1[f"{s}_v2"] = (s, variant(frames, 6, "v2"))
        wave1[f"{s}_v3"] = (s, variant(frames, 7, "v3"))

    wave2 = {
        "alpha_v0_again": ("alpha", shapes["alpha"]),
        "bravo_v1_again": ("bravo", variant(shapes["bravo"], 5, "v1")),
        "charlie_v2_again": ("charlie", variant(shapes["charlie"], 6, "v2")),
        "delta_v4": ("delta", variant(shapes["delta"], 7, "v4")),
        "echo_v4": ("echo", variant(shapes["echo"], 7, "v4")),
        "foxtrot_v5": ("foxtrot", variant(shapes["foxtrot"], 4, "v5")),
        "alpha_v5": ("alpha", variant(shapes["alpha"], 4, "v5")),
        "golf_v0": ("golf", base_shape("golf")),
        "golf_v2": ("golf", variant(base_shape("golf"), 6, "v2")),
        "golf_v3": ("golf", variant(base_shape("golf"), 7, "v3")),
        "hotel_v0": ("hotel", base_shape("hotel")),
        "hotel_v2": ("hotel", variant(base_shape("hotel"), 6, "v2")),
    }
    styles.update({"golf": "asan", "hotel": "gdb"})
    assert len(wave1) == 30 and len(wave2) == 12

    # Wave 1: unique traces, complete linkage must recover the six shapes.
    unique = {}
    for name in sorted(wave1):
        unique.setdefault(tuple(wave1[name][1]), []).append(name)
    keys = sorted(unique)
    groups = complete_linkage([[list(k)] for k in keys])
    assert len(groups) == 6, groups
    for g in groups:
        assert len({wave1[unique[keys[i]][0]][0] for i in g}) == 1
    for a, b in itertools.combinations(keys, 2):
        same = wave1[unique[a][0]][0] == wave1[unique[b][0]][0]
        assert (dist(list(a), list(b)) < THRESHOLD) == same

    clusters = {s: [list(k) for k in keys if wave1[unique[k][0]][0] == s] for s in shapes}

    # Wave 2: hierarchical-level accumulation, processed in a fixed order
    # (any order gives the same groups here because shapes are separated).
    counts = {"dup": 0, "inner": 0, "outer": 0, "oot": 0}
    pool = []
    for name in sorted(wave2):
        shape, frames = wave2[name]
        if any(frames == m for c in clusters.values() for m in c):
            counts["dup"] += 1
            continue
        inner = [s for s, c in clusters.items() if max(dist(frames, m) for m in c) <= diameter(c)]
        outer = [s for s, c in clusters.items()
                 if diameter(c) < max(diameter(c), max(dist(frames, m) for m in c)) < THRESHOLD]
        if inner:
            counts["inner"] += 1
            assert inner == [shape]
            clusters[shape].append(frames)
        else:
            counts["outer" if outer else "oot"] += 1
            pool.append((name, frames))
    atoms = [c for c in clusters.values()] + [[f] for _, f in pool]
    groups = complete_linkage(atoms)
    old = len(clusters)
    final = len([g for g in groups if all(i >= old for i in g)]) + old
    assert counts == {"dup": 3, "inner": 2, "outer": 2, "oot": 5}, counts
    assert final == 8

    shutil.rmtree(OUT, ignore_errors=True)
    for wave, entries in (("wave1", wave1), ("wave2", wave2)):
        os.makedirs(os.path.join(OUT, wave))
        for name, (shape, frames) in sorted(entries.items()):
            with open(os.path.join(OUT, wave, name + ".txt"), "w") as f:
                f.write(render(shape, frames, styles[shape]))

    expected = {
        "threshold": THRESHOLD,
        "wave1": {"total": 30, "unique": len(keys), "clusters": 6,
                  "shapes": {s: sorted(n for n in wave1 if wave1[n][0] == s) for s in shapes}},
        "wave2": {"counts": counts, "clusters": final,
                  "shape_of": {n: s for n, (s, _) in sorted(wave2.items())}},
    }
    with open(os.path.join(OUT, "expected.json"), "w") as f:
        json.dump(expected, f, indent=2, sort_keys=True)
        f.write("\n")


if __name__ == "__main__":
    main()
