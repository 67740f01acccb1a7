#!/usr/bin/env python3
"""Regenerate src/blindscore/_tables.py.

The exp/ln lookup tables are shipped as literal constants so that both
protocol parties (and any future reimplementation) agree on every bit of the
transcendental approximations. This script is the single source of those
constants; run it only when deliberately changing the table resolution, and
commit the regenerated module.
"""

from __future__ import annotations

import math
import pathlib

ENTRIES = 256
ONE = 1 << 16

HEADER = '''"""Fixed-point lookup tables (generated by scripts/gen_tables.py).

Do not edit by hand. The tables are part of the cross-party numeric contract:
both sides of the protocol must use byte-identical constants or trace
recomputation stops being bit-exact.
"""

'''


def exp2_table() -> list[int]:
    # EXP2[j] ~= 2**(j/256) in Q16.16; EXP2[256] = 2.0 exactly (interpolation sentinel).
    return [round((2.0 ** (j / ENTRIES)) * ONE) for j in range(ENTRIES + 1)]


def ln_table() -> list[int]:
    # LN1P[j] ~= ln(1 + j/256) in Q16.16; LN1P[256] = ln 2 (interpolation sentinel).
    return [round(math.log(1.0 + j / ENTRIES) * ONE) for j in range(ENTRIES + 1)]


def fmt(name: str, values: list[int]) -> str:
    lines = [f"{name} = ("]
    for i in range(0, len(values), 8):
        chunk = ", ".join(str(v) for v in values[i : i + 8])
        lines.append(f"    {chunk},")
    lines.append(")")
    return "\n".join(lines)


def main() -> None:
    ln2 = round(math.log(2.0) * ONE)
    log2e = round(math.log2(math.e) * ONE)
    out = HEADER
    out += f"TABLE_ENTRIES = {ENTRIES}\n"
    out += f"LN2_RAW = {ln2}\n"
    out += f"LOG2E_RAW = {log2e}\n\n"
    out += fmt("EXP2_TABLE", exp2_table()) + "\n\n"
    out += fmt("LN1P_TABLE", ln_table()) + "\n"
    dest = pathlib.Path(__file__).resolve().parent.parent / "src" / "blindscore" / "_tables.py"
    dest.write_text(out)
    print(f"wrote {dest}")


if __name__ == "__main__":
    main()
