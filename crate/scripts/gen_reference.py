#!/usr/bin/env python3
"""Regenerates the reference plant, controller, trouble catalog and scenarios.

Run from the repository root: python3 scripts/gen_reference.py
"""
import json
import math
import os

T = 0.5
KNOTS = [18000.0, 19000.0, 20000.0, 21000.0]
GAIN_SCALE = [1.0, 1.05, 1.1, 1.15]
TAU_SCALE = [1.0, 1.1, 1.2, 1.3]

MV = ["CCSSV_Q", "HIC102", "FIC103", "HIC3", "HIC705", "PIC104", "PICS_3302", "LIC701", "HC8", "FIC1"]
CV = ["FI101", "FI102", "FI103", "AI701", "AIAS102", "AIAS103", "AI705"]
MV_BASE = [90000.0, 50.0, 50.0, 40.0, 50.0, 50.0, 50.0, 50.0, 50.0, 5000.0]
MV_MIN = [70000.0] + [0.0] * 8 + [0.0]
MV_MAX = [120000.0] + [100.0] * 8 + [15000.0]
CV_BASE = [90000.0, 18000.0, 40000.0, 10.0, 99.75, 4.0, 98.5]
CV_MIN = [70000.0, 17500.0, 30000.0, 8.0, 99.6, 1.0, 0.0]
CV_MAX = [120000.0, 21500.0, 60000.0, 10.0, 100.0, 5.0, 100.0]

# (cv, mv) -> (gain, tau minutes, delay steps, second pole tau or None)
CHANNELS = {
    ("FI101", "CCSSV_Q"): (1.0, 0.5, 0, None),
    ("FI102", "CCSSV_Q"): (0.1, 2.5, 1, None),
    ("FI102", "HIC102"): (100.0, 1.0, 0, None),
    ("FI102", "PICS_3302"): (20.0, 1.0, 0, None),
    ("FI103", "CCSSV_Q"): (0.4, 2.5, 1, None),
    ("FI103", "HIC102"): (-20.0, 1.5, 0, None),
    ("FI103", "FIC103"): (300.0, 1.0, 0, None),
    ("FI103", "HIC3"): (-30.0, 2.0, 0, None),
    ("FI103", "HC8"): (-50.0, 1.5, 0, None),
    ("FI103", "FIC1"): (0.5, 1.5, 0, None),
    ("AI701", "CCSSV_Q"): (-0.0001, 2.5, 1, None),
    ("AI701", "HIC102"): (0.1, 2.5, 1, None),
    ("AI701", "PICS_3302"): (0.02, 2.5, 1, None),
    ("AIAS102", "CCSSV_Q"): (0.000002, 3.0, 1, None),
    ("AIAS102", "HIC102"): (-0.002, 2.0, 0, 1.0),
    ("AIAS102", "HIC3"): (0.005, 2.0, 1, None),
    ("AIAS102", "PIC104"): (-0.005, 2.0, 0, None),
    ("AIAS103", "CCSSV_Q"): (0.0004, 2.5, 1, None),
    ("AIAS103", "FIC103"): (0.02, 2.0, 0, None),
    ("AIAS103", "HIC3"): (-0.4, 2.0, 1, None),
    ("AIAS103", "HC8"): (0.05, 2.0, 0, None),
    ("AIAS103", "FIC1"): (0.0002, 2.0, 0, None),
    ("AI705", "CCSSV_Q"): (0.0003, 3.5, 2, None),
    ("AI705", "HIC102"): (-0.3, 3.5, 2, None),
    ("AI705", "PICS_3302"): (-0.06, 3.5, 2, None),
    ("AI705", "HIC705"): (0.05, 3.0, 1, None),
    ("AI705", "LIC701"): (-0.02, 3.0, 1, None),
}


def lag(gain, tau, d, tau2):
    p = math.exp(-T / tau)
    if tau2 is None:
        return {"b": [gain * (1 - p)], "a": [-p], "d": d}
    q = math.exp(-T / tau2)
    return {"b": [gain * (1 - p) * (1 - q), 0.0], "a": [-(p + q), p * q], "d": d}


def local_set(j):
    rows = []
    for cv in CV:
        row = []
        for mv in MV:
            ch = CHANNELS.get((cv, mv))
            if ch is None:
                row.append({"b": [0.0], "a": [0.0], "d": 0})
            else:
                g, tau, d, tau2 = ch
                row.append(lag(g * GAIN_SCALE[j], tau * TAU_SCALE[j], d,
                               None if tau2 is None else tau2 * TAU_SCALE[j]))
        rows.append(row)
    return rows


def plant():
    return {
        "name": "reference_asp",
        "period_min": T,
        "working_points": KNOTS,
        "mv_tags": MV,
        "cv_tags": CV,
        "working_point_cv": "FI102",
        "local_models": [local_set(j) for j in range(len(KNOTS))],
        "weighting": {"type": "natural_cubic_spline"},
        "w_bounds": [17500.0, 21500.0],
        "base": {"mv": MV_BASE, "cv": CV_BASE},
        "mv_limits": {"min": MV_MIN, "max": MV_MAX},
    }


def controller():
    du = [1500.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0, 500.0]
    return {
        "sso": {
            "B": [0.01] + [0.0] * 9,
            "C": [0.0] * 7,
            "Z": [1e3, 1e3, 1e3, 1e4, 1e6, 1e4, 1e3],
            "u_min": MV_MIN,
            "u_max": MV_MAX,
            "y_min": CV_MIN,
            "y_max": CV_MAX,
        },
        "ndpc": {
            "P": 20,
            "M": 5,
            "Q": [1.0, 200.0, 1.0, 50.0, 10.0, 0.0, 0.0],
            "H": [1e3, 1e3, 1e3, 1e5, 1e5, 1e4, 1e3],
            "R": [1.0] * 10,
            "V": [0.1] * 10,
            "tau": [1.0, 1.0, 2.0, 2.0, 2.0, 2.0, 2.0],
            "max_iter": 10,
            "du_min": [-v for v in du],
            "du_max": du,
        },
    }


def trouble_catalog():
    n_y, n_u = len(CV), len(MV)

    def gain(factor, cv=None, mv=None):
        f = [[1.0] * n_u for _ in range(n_y)]
        for k in range(n_y):
            for i in range(n_u):
                if (cv is None or CV[k] == cv) and (mv is None or MV[i] == mv):
                    f[k][i] = factor
        return f

    du = controller()["ndpc"]["du_max"]

    def rates(mv, lo, hi):
        lo_v = [-v for v in du]
        hi_v = list(du)
        i = MV.index(mv)
        lo_v[i], hi_v[i] = lo, hi
        return lo_v, hi_v

    def offsets(cv, value):
        o = [0.0] * n_y
        o[CV.index(cv)] = value
        return o

    frozen = rates("CCSSV_Q", 0.0, 0.0)
    slow = rates("HIC102", -0.2, 0.2)
    return [
        {"index": 0, "name": "normal operation"},
        {"index": 1, "name": "mild gain error", "activate_at": 4, "gain_factors": gain(0.85)},
        {"index": 2, "name": "moderate gain error on GOX", "activate_at": 4,
         "gain_factors": gain(0.6, cv="FI102")},
        {"index": 3, "name": "severe gain error on argon", "activate_at": 4,
         "gain_factors": gain(0.3, cv="AI701")},
        {"index": 4, "name": "feed air frozen", "activate_at": 4,
         "du_min": frozen[0], "du_max": frozen[1]},
        {"index": 5, "name": "GOX valve rate cut", "activate_at": 4,
         "du_min": slow[0], "du_max": slow[1]},
        {"index": 6, "name": "argon analyzer bias", "activate_at": 4,
         "cv_offsets": offsets("AI701", -2.5641)},
        {"index": 7, "name": "GOX flow meter bias", "activate_at": 4,
         "cv_offsets": offsets("FI102", 300.0)},
        {"index": 8, "name": "purity analyzer bias", "activate_at": 4,
         "cv_offsets": offsets("AIAS102", 0.1)},
        {"index": 9, "name": "gain error with frozen feed air", "activate_at": 4,
         "gain_factors": gain(0.7, cv="AI701"), "du_min": frozen[0], "du_max": frozen[1]},
    ]


def scenario(name, w_from, w_to, **extra):
    s = {
        "schema_version": 1,
        "name": name,
        "plant": "../configs/reference_asp.json",
        "controller": "../configs/reference_controller.json",
        "trouble_catalog": "../configs/trouble_catalog.json",
        "task": {"w_from": w_from, "w_to": w_to},
        "seed": 7,
    }
    s.update(extra)
    return s


def write(path, obj):
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w") as f:
        json.dump(obj, f, indent=1)
        f.write("\n")


def main():
    write("configs/reference_asp.json", plant())
    write("configs/reference_controller.json", controller())
    write("configs/trouble_catalog.json", trouble_catalog())
    for a in KNOTS:
        for b in KNOTS:
            if a != b:
                n = f"dlc_{int(a)}_{int(b)}"
                write(f"scenarios/{n}.json", scenario(n, a, b))
    write("scenarios/accident_replay.json", scenario(
        "accident_replay", 18000.0, 18000.0, mode="troublemaker", max_steps=240,
        trouble_index=6, complete_on_band=False))


if __name__ == "__main__":
    main()
