"""Regenerate the feeder files shipped in ``feederid/data``.

ieee123: single-phase positive-sequence equivalent of the IEEE 123-bus test
feeder.  Closed switches become short lines, open switches and the 610
transformer branch are dropped.  Impedances use approximate positive-sequence
values per line configuration.  radial12: a small hand-made 12-bus tree.

Run from the repository root: ``python3 tools/make_bundled_feeders.py``.
"""
import json
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "feederid" / "data"

# (from, to, length in ft, configuration)
IEEE123_LINES = """
1 2 175 10; 1 3 250 11; 1 7 300 1; 3 4 200 11; 3 5 325 11; 5 6 250 11
7 8 200 1; 8 12 225 10; 8 9 225 9; 8 13 300 1; 9 14 425 9; 13 34 150 11
13 18 825 2; 14 11 250 9; 14 10 250 9; 15 16 375 11; 15 17 350 11
18 19 250 9; 18 21 300 2; 19 20 325 9; 21 22 525 10; 21 23 250 2
23 24 550 11; 23 25 275 2; 25 26 350 7; 25 28 200 2; 26 27 275 7
26 31 225 11; 27 33 500 9; 28 29 300 2; 29 30 350 2; 30 250 200 2
31 32 300 11; 34 15 100 11; 35 36 650 8; 35 40 250 1; 36 37 300 9
36 38 250 10; 38 39 325 10; 40 41 325 11; 40 42 250 1; 42 43 500 10
42 44 200 1; 44 45 200 9; 44 47 250 1; 45 46 300 9; 47 48 150 4
47 49 250 4; 49 50 250 4; 50 51 250 4; 52 53 200 1; 53 54 125 1
54 55 275 1; 54 57 350 3; 55 56 275 1; 57 58 250 10; 57 60 750 3
58 59 250 10; 60 61 550 5; 60 62 250 12; 62 63 175 12; 63 64 350 12
64 65 425 12; 65 66 325 12; 67 68 200 9; 67 72 275 3; 67 97 250 3
68 69 275 9; 69 70 325 9; 70 71 275 9; 72 73 275 11; 72 76 200 3
73 74 350 11; 74 75 400 11; 76 77 400 6; 76 86 700 3; 77 78 100 6
78 79 225 6; 78 80 475 6; 80 81 475 6; 81 82 250 6; 81 84 675 11
82 83 250 6; 84 85 475 11; 86 87 450 6; 87 88 175 9; 87 89 275 6
89 90 225 10; 89 91 225 6; 91 92 300 11; 91 93 225 6; 93 94 275 9
93 95 300 6; 95 96 200 10; 97 98 275 3; 98 99 550 3; 99 100 300 3
100 450 800 3; 101 102 225 11; 101 105 275 3; 102 103 325 11
103 104 700 11; 105 106 225 10; 105 108 325 3; 106 107 575 10
108 109 450 9; 108 300 1000 3; 109 110 300 9; 110 111 575 9
110 112 125 9; 112 113 525 9; 113 114 325 9; 135 35 375 4; 149 1 400 1
152 52 400 1; 160 67 350 6; 197 101 250 3
"""
CLOSED_SWITCHES = [("150", "149"), ("13", "152"), ("18", "135"), ("60", "160"), ("97", "197")]

# positive-sequence ohm/mile
CONFIG_Z = {**{k: (0.3020, 0.5760) for k in range(1, 9)},
            **{k: (1.3292, 1.3475) for k in (9, 10, 11)},
            12: (1.0011, 0.4746)}
SWITCH_Z = (0.001, 0.001)          # ohm
V_BASE = 4.16e3                    # line-to-line volts
S_BASE = 1.0e5                     # VA
Z_BASE = V_BASE ** 2 / S_BASE


def line(a, b, r_ohm, x_ohm):
    x = x_ohm / Z_BASE
    z = r_ohm / x_ohm
    return {"from": a, "to": b, "r": z * x, "x": x, "z": z}


def ieee123():
    lines = [line(a, b, *SWITCH_Z) for a, b in CLOSED_SWITCHES]
    for item in IEEE123_LINES.replace("\n", ";").split(";"):
        if not item.strip():
            continue
        a, b, ft, cfg = item.split()
        r, x = CONFIG_Z[int(cfg)]
        miles = float(ft) / 5280.0
        lines.append(line(a, b, r * miles, x * miles))
    return {"v0": 1.0, "root": "150", "lines": lines}


def radial12():
    # (parent, child, r, x) in p.u.
    edges = [(0, 1, 0.0030, 0.0060), (1, 2, 0.0040, 0.0050), (2, 3, 0.0060, 0.0040),
            (3, 4, 0.0050, 0.0050), (2, 5, 0.0080, 0.0045), (5, 6, 0.0070, 0.0035),
            (1, 7, 0.0020, 0.0070), (7, 8, 0.0045, 0.0030), (8, 9, 0.0060, 0.0030),
            (7, 10, 0.0030, 0.0060), (10, 11, 0.0090, 0.0045), (4, 12, 0.0040, 0.0080)]
    lines = []
    for a, b, r, x in edges:
        z = r / x
        lines.append({"from": str(a), "to": str(b), "r": z * x, "x": x, "z": z})
    return {"v0": 1.0, "root": "0", "lines": lines}


if __name__ == "__main__":
    for name, data in (("ieee123", ieee123()), ("radial12", radial12())):
        (OUT / f"{name}.json").write_text(json.dumps(data, indent=1) + "\n")
        print(name, len(data["lines"]), "lines")
