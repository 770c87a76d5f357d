"""Regenerate the bundled feeder documents in src/pawnn/data/.

IEEE-37 data follow the PES test feeder tables: line segments with the
721-724 underground cable configurations (ohm/mile, uS/mile), spot loads
(all treated as constant power), XFM-1 referred to the 4.8 kV side.
"""

import json
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "pawnn" / "data"
FT_PER_MILE = 5280.0

# series impedance, ohm/mile (upper triangle, row-major) and shunt susceptance, uS/mile
CONFIGS = {
    721: ([0.2926 + 0.1973j, 0.0673 - 0.0368j, 0.0337 - 0.0417j,
           0.2646 + 0.1900j, 0.0673 - 0.0368j, 0.2926 + 0.1973j], 159.7919),
    722: ([0.4751 + 0.2973j, 0.1629 - 0.0326j, 0.1234 - 0.0607j,
           0.4488 + 0.2678j, 0.1629 - 0.0326j, 0.4751 + 0.2973j], 127.8306),
    723: ([1.2936 + 0.6713j, 0.4871 + 0.2111j, 0.4585 + 0.1521j,
           1.3022 + 0.6326j, 0.4871 + 0.2111j, 1.2936 + 0.6713j], 74.8405),
    724: ([2.0952 + 0.7758j, 0.5204 + 0.2738j, 0.4926 + 0.2123j,
           2.1068 + 0.7398j, 0.5204 + 0.2738j, 2.0952 + 0.7758j], 60.2483),
}

SEGMENTS = [
    (701, 702, 960, 722), (702, 705, 400, 724), (702, 713, 360, 723), (702, 703, 1320, 722),
    (703, 727, 240, 724), (703, 730, 600, 723), (704, 714, 80, 724), (704, 720, 800, 723),
    (705, 742, 320, 724), (705, 712, 240, 724), (706, 725, 280, 724), (707, 724, 760, 724),
    (707, 722, 120, 724), (708, 733, 320, 723), (708, 732, 320, 724), (709, 731, 600, 723),
    (709, 708, 320, 723), (710, 735, 200, 724), (710, 736, 1280, 724), (711, 741, 400, 723),
    (711, 740, 200, 724), (713, 704, 520, 723), (714, 718, 520, 724), (720, 707, 920, 724),
    (720, 706, 600, 723), (727, 744, 280, 723), (730, 709, 200, 723), (733, 734, 560, 723),
    (734, 737, 640, 723), (734, 710, 520, 724), (737, 738, 400, 723), (738, 711, 400, 723),
    (744, 728, 200, 724), (744, 729, 280, 724), (799, 701, 1850, 721),
]
XFM = (709, 775)  # 500 kVA, 4.8/0.48 kV, R = 0.09 %, X = 1.81 %

# delta spot loads: (kW, kvar) for pairs ab, bc, ca
LOADS = {
    701: [(140, 70), (140, 70), (350, 175)], 712: [(0, 0), (0, 0), (85, 40)],
    713: [(0, 0), (0, 0), (85, 40)], 714: [(17, 8), (21, 10), (0, 0)],
    718: [(85, 40), (0, 0), (0, 0)], 720: [(0, 0), (0, 0), (85, 40)],
    722: [(0, 0), (140, 70), (21, 10)], 724: [(0, 0), (42, 21), (0, 0)],
    725: [(0, 0), (42, 21), (0, 0)], 727: [(0, 0), (0, 0), (42, 21)],
    728: [(42, 21), (42, 21), (42, 21)], 729: [(42, 21), (0, 0), (0, 0)],
    730: [(0, 0), (0, 0), (85, 40)], 731: [(0, 0), (85, 40), (0, 0)],
    732: [(0, 0), (0, 0), (42, 21)], 733: [(85, 40), (0, 0), (0, 0)],
    734: [(0, 0), (0, 0), (42, 21)], 735: [(0, 0), (0, 0), (85, 40)],
    736: [(0, 0), (42, 21), (0, 0)], 737: [(140, 70), (0, 0), (0, 0)],
    738: [(126, 62), (0, 0), (0, 0)], 740: [(0, 0), (0, 0), (85, 40)],
    741: [(0, 0), (0, 0), (42, 21)], 742: [(8, 4), (85, 40), (0, 0)],
    744: [(42, 21), (0, 0), (0, 0)],
}
# renewable sites (the six DER buses are a reconstruction)
RES = {704, 706, 708, 711, 728, 741}


def _mat(z):
    return [[[float(x.real), float(x.imag)] for x in row] for row in z]


def _sym(up):
    a, b, c, d, e, f = up
    return np.array([[a, b, c], [b, d, e], [c, e, f]])


def ieee37():
    buses = sorted({n for s in SEGMENTS for n in s[:2]} | set(XFM))
    lines = []
    for a, b, ft, cfg in SEGMENTS:
        up, bsh = CONFIGS[cfg]
        miles = ft / FT_PER_MILE
        z = _sym(up) * miles
        y = np.eye(3) * 1j * bsh * 1e-6 * miles
        lines.append({"from": a, "to": b, "phases": "abc", "z": _mat(z), "yshunt": _mat(y)})
    zb = 4.8 ** 2 * 1000 / 500.0
    zx = np.eye(3) * (0.0009 + 0.0181j) * zb
    lines.append({"from": XFM[0], "to": XFM[1], "phases": "abc", "z": _mat(zx), "yshunt": None})
    out = []
    for n in buses:
        rb = {"id": n, "phases": "abc", "res": n in RES}
        if n in LOADS:
            rb["load"] = {"conn": "delta", "p_kw": [p for p, _ in LOADS[n]], "q_kvar": [q for _, q in LOADS[n]]}
        out.append(rb)
    return {"base_kv": 4.8, "base_kva": 2500.0, "source": 799, "buses": out, "lines": lines}


def small(edges, loads, source=1):
    zb = 4.8 ** 2 * 1000 / 1000.0
    z = np.array([[0.02 + 0.04j, 0.005 + 0.01j, 0.005 + 0.01j],
                  [0.005 + 0.01j, 0.02 + 0.04j, 0.005 + 0.01j],
                  [0.005 + 0.01j, 0.005 + 0.01j, 0.02 + 0.04j]]) * zb
    buses = sorted({n for e in edges for n in e})
    return {
        "base_kv": 4.8, "base_kva": 1000.0, "source": source,
        "buses": [
            {"id": n, "phases": "abc", "res": False,
             **({"load": {"conn": "wye", "p_kw": loads[n][0], "q_kvar": loads[n][1]}} if n in loads else {})}
            for n in buses
        ],
        "lines": [{"from": a, "to": b, "phases": "abc", "z": _mat(z), "yshunt": None} for a, b in edges],
    }


if __name__ == "__main__":
    OUT.mkdir(parents=True, exist_ok=True)
    docs = {
        "ieee37.json": ieee37(),
        "path4.json": small([(1, 2), (2, 3), (3, 4)],
                            {2: ([30, 25, 35], [12, 10, 15]), 3: ([20, 40, 25], [8, 16, 10]),
                             4: ([45, 30, 40], [20, 12, 18])}),
        "star5.json": small([(1, 2), (2, 3), (2, 4), (2, 5)],
                            {3: ([30, 25, 35], [12, 10, 15]), 4: ([20, 40, 25], [8, 16, 10]),
                             5: ([45, 30, 40], [20, 12, 18])}),
    }
    for name, doc in docs.items():
        (OUT / name).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
        print("wrote", OUT / name)
