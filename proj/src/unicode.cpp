#include "plc2/unicode.hpp"

#include <algorithm>

namespace plc2 {

namespace {

#include "unicode_tables.inc"

const SeqEntry* find_seq(const SeqEntry* table, size_t n, uint32_t cp) {
    const SeqEntry* end = table + n;
    const SeqEntry* it = std::lower_bound(table, end, cp, [](const SeqEntry& e, uint32_t v) {
        return e.cp < v;
    });
    return (it != end && it->cp == cp) ? it : nullptr;
}

int ccc_of(uint32_t cp) {
    const CccEntry* end = kCccTable + std::size(kCccTable);
    const CccEntry* it = std::lower_bound(kCccTable, end, cp, [](const CccEntry& e, uint32_t v) {
        return e.cp < v;
    });
    return (it != end && it->cp == cp) ? it->ccc : 0;
}

// Hangul syllables compose algorithmically (they are absent from the table)
constexpr uint32_t kLBase = 0x1100, kVBase = 0x1161, kTBase = 0x11A7, kSBase = 0xAC00;
constexpr uint32_t kLCount = 19, kVCount = 21, kTCount = 28;
constexpr uint32_t kSCount = kLCount * kVCount * kTCount;

uint32_t compose_pair(uint32_t a, uint32_t b) {
    if (a >= kLBase && a < kLBase + kLCount && b >= kVBase && b < kVBase + kVCount)
        return kSBase + ((a - kLBase) * kVCount + (b - kVBase)) * kTCount;
    if (a >= kSBase && a < kSBase + kSCount && (a - kSBase) % kTCount == 0 && b > kTBase &&
        b < kTBase + kTCount)
        return a + (b - kTBase);
    uint64_t key = (uint64_t(a) << 21) | b;
    const CompEntry* end = kCompTable + std::size(kCompTable);
    const CompEntry* it = std::lower_bound(kCompTable, end, key, [](const CompEntry& e, uint64_t v) {
        return e.key < v;
    });
    return (it != end && it->key == key) ? it->cp : 0;
}

}  // namespace

std::vector<uint32_t> utf8_decode(const std::string& s) {
    std::vector<uint32_t> out;
    size_t i = 0;
    const size_t n = s.size();
    while (i < n) {
        uint8_t b0 = uint8_t(s[i]);
        uint32_t cp = 0xFFFD;
        size_t len = 1;
        if (b0 < 0x80) {
            cp = b0;
        } else if ((b0 & 0xE0) == 0xC0) {
            len = 2;
            cp = b0 & 0x1F;
        } else if ((b0 & 0xF0) == 0xE0) {
            len = 3;
            cp = b0 & 0x0F;
        } else if ((b0 & 0xF8) == 0xF0) {
            len = 4;
            cp = b0 & 0x07;
        } else {
            out.push_back(0xFFFD);
            i++;
            continue;
        }
        if (i + len > n) {
            out.push_back(0xFFFD);
            i++;
            continue;
        }
        bool ok = true;
        for (size_t k = 1; k < len; k++) {
            uint8_t bk = uint8_t(s[i + k]);
            if ((bk & 0xC0) != 0x80) {
                ok = false;
                break;
            }
            cp = (cp << 6) | (bk & 0x3F);
        }
        // reject overlong forms, surrogates, and out-of-range values
        static const uint32_t kMin[5] = {0, 0, 0x80, 0x800, 0x10000};
        if (!ok || cp < kMin[len] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
            out.push_back(0xFFFD);
            i++;
            continue;
        }
        out.push_back(cp);
        i += len;
    }
    return out;
}

std::string utf8_encode(const std::vector<uint32_t>& cps) {
    std::string out;
    for (uint32_t cp : cps) {
        if (cp < 0x80) {
            out.push_back(char(cp));
        } else if (cp < 0x800) {
            out.push_back(char(0xC0 | (cp >> 6)));
            out.push_back(char(0x80 | (cp & 0x3F)));
        } else if (cp < 0x10000) {
            out.push_back(char(0xE0 | (cp >> 12)));
            out.push_back(char(0x80 | ((cp >> 6) & 0x3F)));
            out.push_back(char(0x80 | (cp & 0x3F)));
        } else {
            out.push_back(char(0xF0 | (cp >> 18)));
            out.push_back(char(0x80 | ((cp >> 12) & 0x3F)));
            out.push_back(char(0x80 | ((cp >> 6) & 0x3F)));
            out.push_back(char(0x80 | (cp & 0x3F)));
        }
    }
    return out;
}

std::vector<uint32_t> nfkc(const std::vector<uint32_t>& cps) {
    // full compatibility decomposition (the table is pre-expanded)
    std::vector<uint32_t> buf;
    buf.reserve(cps.size());
    for (uint32_t cp : cps) {
        if (const SeqEntry* e = find_seq(kDecompIndex, std::size(kDecompIndex), cp)) {
            for (uint32_t k = 0; k < e->len; k++) buf.push_back(kDecompData[e->off + k]);
        } else {
            buf.push_back(cp);
        }
    }

    // canonical ordering: stable sort runs of nonzero combining class
    size_t i = 0;
    while (i < buf.size()) {
        if (ccc_of(buf[i]) == 0) {
            i++;
            continue;
        }
        size_t j = i;
        while (j < buf.size() && ccc_of(buf[j]) != 0) j++;
        std::stable_sort(buf.begin() + long(i), buf.begin() + long(j),
                         [](uint32_t a, uint32_t b) { return ccc_of(a) < ccc_of(b); });
        i = j;
    }

    // canonical composition
    std::vector<uint32_t> out;
    out.reserve(buf.size());
    long starter = -1;
    int prev_cc = 0;
    for (uint32_t cp : buf) {
        int cc = ccc_of(cp);
        if (starter >= 0) {
            bool blocked = long(out.size()) - 1 > starter && prev_cc >= cc;
            if (!blocked) {
                if (uint32_t composed = compose_pair(out[size_t(starter)], cp)) {
                    out[size_t(starter)] = composed;
                    continue;
                }
            }
        }
        if (cc == 0) starter = long(out.size());
        prev_cc = cc;
        out.push_back(cp);
    }
    return out;
}

std::vector<uint32_t> to_lower(const std::vector<uint32_t>& cps) {
    std::vector<uint32_t> out;
    out.reserve(cps.size());
    for (uint32_t cp : cps) {
        if (const SeqEntry* e = find_seq(kLowerIndex, std::size(kLowerIndex), cp)) {
            for (uint32_t k = 0; k < e->len; k++) out.push_back(kLowerData[e->off + k]);
        } else {
            out.push_back(cp);
        }
    }
    return out;
}

bool is_space(uint32_t cp) {
    switch (cp) {
        case 0x09: case 0x0A: case 0x0B: case 0x0C: case 0x0D: case 0x20:
        case 0x85: case 0xA0: case 0x1680: case 0x2028: case 0x2029:
        case 0x202F: case 0x205F: case 0x3000:
            return true;
        default:
            return cp >= 0x2000 && cp <= 0x200A;
    }
}

}  // namespace plc2
