#!/usr/bin/env python3
"""Convert a MATPOWER version-2 case file (.m) to the gridstate JSON case schema.

Field correspondence (mpc table column -> JSON field):

  baseMVA                -> base_mva
  bus  BUS_I             -> buses[].id
  bus  BUS_TYPE 1/2/3    -> buses[].kind "PQ"/"PV"/"Slack"
  bus  PD - sum(gen PG)  -> buses[].p_load_mw   (net demand, generation folded in)
  bus  QD - sum(gen QG)  -> buses[].q_load_mvar (only meaningful at PQ buses)
  bus  GS, BS            -> buses[].gs_mw, buses[].bs_mvar
  gen  VG (PV/Slack)     -> buses[].v_setpoint  (null at PQ buses)
  bus  BASE_KV           -> buses[].base_kv
  branch F_BUS, T_BUS    -> branches[].from, branches[].to
  branch BR_R, BR_X, BR_B-> branches[].r_pu, x_pu, b_pu
  branch TAP (0 => 1.0)  -> branches[].tap
  branch SHIFT (deg)     -> branches[].shift_rad
  branch BR_STATUS       -> branches[].status "In"/"Out"

Only in-service generators contribute. A PV bus without an in-service
generator is demoted to PQ. With --distribution, every non-slack bus is
written as PQ, and the ohm/kW unit conversion used by distribution feeder
files (case33bw, case69) is applied.
"""
import argparse
import json
import math
import re
import sys


def table(src, name):
    m = re.search(r"mpc\.%s\s*=\s*\[(.*?)\];" % name, src, re.S)
    if not m:
        raise SystemExit(f"missing mpc.{name}")
    rows = []
    for line in m.group(1).splitlines():
        line = line.split("%")[0].strip().rstrip(";")
        if line:
            rows.append([float(v) for v in line.split()])
    return rows


def scalar(src, name):
    m = re.search(r"mpc\.%s\s*=\s*([0-9.eE+-]+)\s*;" % name, src)
    return float(m.group(1))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("input")
    ap.add_argument("output")
    ap.add_argument("--distribution", action="store_true")
    args = ap.parse_args()
    src = open(args.input).read()
    base = scalar(src, "baseMVA")
    bus = table(src, "bus")
    gen = table(src, "gen")
    branch = table(src, "branch")

    if args.distribution:
        vbase = bus[0][9] * 1e3
        zbase = vbase ** 2 / (base * 1e6)
        for br in branch:
            br[2] /= zbase
            br[3] /= zbase
        for b in bus:
            b[2] /= 1e3
            b[3] /= 1e3

    pg, qg, vg = {}, {}, {}
    for g in gen:
        if len(g) > 7 and g[7] <= 0:
            continue
        bid = int(g[0])
        pg[bid] = pg.get(bid, 0.0) + g[1]
        qg[bid] = qg.get(bid, 0.0) + g[2]
        vg[bid] = g[5]

    kinds = {1: "PQ", 2: "PV", 3: "Slack"}
    buses = []
    for b in bus:
        bid = int(b[0])
        kind = kinds[int(b[1])]
        if kind == "PV" and (bid not in vg or args.distribution):
            kind = "PQ"
        setpoint = vg.get(bid, b[7]) if kind != "PQ" else None
        buses.append({
            "id": bid,
            "kind": kind,
            "p_load_mw": round(b[2] - pg.get(bid, 0.0), 10),
            "q_load_mvar": round(b[3] - qg.get(bid, 0.0), 10),
            "gs_mw": b[4],
            "bs_mvar": b[5],
            "v_setpoint": setpoint,
            "base_kv": b[9],
        })
    branches = []
    for br in branch:
        branches.append({
            "from": int(br[0]),
            "to": int(br[1]),
            "r_pu": br[2],
            "x_pu": br[3],
            "b_pu": br[4],
            "tap": br[8] if br[8] != 0 else 1.0,
            "shift_rad": math.radians(br[9]),
            "status": "In" if br[10] > 0 else "Out",
        })
    with open(args.output, "w") as f:
        json.dump({"base_mva": base, "buses": buses, "branches": branches}, f, indent=1)
        f.write("\n")
    print(f"{args.output}: {len(buses)} buses, {len(branches)} branches", file=sys.stderr)


if __name__ == "__main__":
    main()
