#!/usr/bin/env python3
# Generates src/unicode_tables.inc from the Python unicodedata database:
# full NFKD decompositions, canonical combining classes, canonical
# composition pairs, and per-codepoint lowercase expansions.
import sys
import unicodedata

MAX_CP = 0x110000


def main(out_path):
    decomp_index = []  # (cp, offset, len) into decomp_data
    decomp_data = []
    ccc = []  # (cp, class)
    comp = []  # (a, b, composed)
    lower_index = []  # (cp, offset, len) into lower_data
    lower_data = []

    for cp in range(MAX_CP):
        if 0xD800 <= cp <= 0xDFFF:
            continue
        ch = chr(cp)

        c = unicodedata.combining(ch)
        if c:
            ccc.append((cp, c))

        nfkd = unicodedata.normalize("NFKD", ch)
        if nfkd != ch:
            decomp_index.append((cp, len(decomp_data), len(nfkd)))
            decomp_data.extend(ord(x) for x in nfkd)

        low = ch.lower()
        if low != ch:
            lower_index.append((cp, len(lower_data), len(low)))
            lower_data.extend(ord(x) for x in low)

        # canonical pair composition: primary composites only
        d = unicodedata.decomposition(ch)
        if d and not d.startswith("<"):
            parts = [int(p, 16) for p in d.split()]
            if len(parts) == 2:
                a, b = parts
                if unicodedata.normalize("NFC", chr(a) + chr(b)) == ch:
                    comp.append((a, b, cp))
    comp.sort(key=lambda t: (t[0] << 21) | t[1])

    with open(out_path, "w") as f:
        f.write("// generated by scripts/gen_unicode_tables.py from unicodedata %s\n"
                % unicodedata.unidata_version)
        f.write("// clang-format off\n")

        f.write("struct SeqEntry { uint32_t cp; uint32_t off; uint32_t len; };\n\n")

        f.write("static const SeqEntry kDecompIndex[] = {\n")
        for cp, off, n in decomp_index:
            f.write("{0x%X,%d,%d},\n" % (cp, off, n))
        f.write("};\n\n")
        f.write("static const uint32_t kDecompData[] = {\n")
        for i in range(0, len(decomp_data), 16):
            f.write(",".join("0x%X" % v for v in decomp_data[i:i + 16]) + ",\n")
        f.write("};\n\n")

        f.write("static const SeqEntry kLowerIndex[] = {\n")
        for cp, off, n in lower_index:
            f.write("{0x%X,%d,%d},\n" % (cp, off, n))
        f.write("};\n\n")
        f.write("static const uint32_t kLowerData[] = {\n")
        for i in range(0, len(lower_data), 16):
            f.write(",".join("0x%X" % v for v in lower_data[i:i + 16]) + ",\n")
        f.write("};\n\n")

        f.write("struct CccEntry { uint32_t cp; uint8_t ccc; };\n")
        f.write("static const CccEntry kCccTable[] = {\n")
        for cp, c in ccc:
            f.write("{0x%X,%d},\n" % (cp, c))
        f.write("};\n\n")

        f.write("struct CompEntry { uint64_t key; uint32_t cp; };  // key = a<<21 | b\n")
        f.write("static const CompEntry kCompTable[] = {\n")
        for a, b, c in comp:
            f.write("{0x%XULL,0x%X},\n" % ((a << 21) | b, c))
        f.write("};\n")
        f.write("// clang-format on\n")

    print("decomp %d (%d cps), lower %d, ccc %d, comp %d" %
          (len(decomp_index), len(decomp_data), len(lower_index), len(ccc), len(comp)))


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "src/unicode_tables.inc")
