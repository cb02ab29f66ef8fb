#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace plc2 {

// Invalid UTF-8 bytes decode to U+FFFD (one replacement per bad byte).
std::vector<uint32_t> utf8_decode(const std::string& s);
std::string utf8_encode(const std::vector<uint32_t>& cps);

// Unicode NFKC: full compatibility decomposition, canonical reordering,
// canonical composition (tables generated from the Unicode database).
std::vector<uint32_t> nfkc(const std::vector<uint32_t>& cps);

// Per-codepoint lowercase (may expand, e.g. U+0130).
std::vector<uint32_t> to_lower(const std::vector<uint32_t>& cps);

bool is_space(uint32_t cp);

}  // namespace plc2
