"""Generates the AES encryption lookup tables header for the C fixture.

The S-box is computed from first principles (multiplicative inverse in
GF(2^8) followed by the affine map), and the four T tables combine it
with the MixColumns coefficients, each table a byte rotation of the
previous one.  Run from the repository root:

    python3 tools/make_aes_tables.py
"""

from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / \
    "aes_tables.h"


def gf_mult(a: int, b: int) -> int:
    result = 0
    for _ in range(8):
        if b & 1:
            result ^= a
        high = a & 0x80
        a = (a << 1) & 0xFF
        if high:
            a ^= 0x1B
        b >>= 1
    return result


def make_sbox() -> list[int]:
    # multiplicative inverses via brute force; the field is tiny
    inverse = [0] * 256
    for x in range(1, 256):
        for y in range(1, 256):
            if gf_mult(x, y) == 1:
                inverse[x] = y
                break
    sbox = []
    for x in range(256):
        b = inverse[x]
        value = 0x63
        for i in range(8):
            bit = ((b >> i) ^ (b >> ((i + 4) % 8)) ^ (b >> ((i + 5) % 8))
                   ^ (b >> ((i + 6) % 8)) ^ (b >> ((i + 7) % 8))) & 1
            value ^= bit << i
        sbox.append(value)
    return sbox


def ror8(value: int) -> int:
    return ((value >> 8) | (value << 24)) & 0xFFFFFFFF


def make_tables() -> list[list[int]]:
    sbox = make_sbox()
    assert sbox[0x00] == 0x63 and sbox[0x53] == 0xED
    te0 = []
    for x in range(256):
        s = sbox[x]
        s2 = gf_mult(s, 2)
        s3 = s2 ^ s
        te0.append((s2 << 24) | (s << 16) | (s << 8) | s3)
    tables = [te0]
    for _ in range(3):
        tables.append([ror8(v) for v in tables[-1]])
    return tables


def emit(tables: list[list[int]]) -> str:
    lines = ["/* AES encryption T tables; generated by",
             "   tools/make_aes_tables.py.  Do not edit by hand. */",
             ""]
    for index, table in enumerate(tables):
        lines.append(f"static const u32 Te{index}[256] = {{")
        for row in range(0, 256, 4):
            cells = ", ".join(f"0x{v:08x}u" for v in table[row:row + 4])
            comma = "," if row + 4 < 256 else ""
            lines.append(f"    {cells}{comma}")
        lines.append("};")
        lines.append("")
    return "\n".join(lines)


def main() -> None:
    tables = make_tables()
    assert tables[0][0] == 0xC66363A5
    assert tables[1][0] == 0xA5C66363
    OUT.write_text(emit(tables))
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()
