#pragma once

#include "plc2/tensor.hpp"

#include <cstdint>
#include <vector>

namespace plc2 {

// 8-bit float formats for the KV cache.
//   E4M3: bias 7, no infinities, NaN = S.1111.111, max finite 448
//   E5M2: bias 15, IEEE-style inf/NaN at exponent 31, max finite 57,344
enum class Fp8Format { E4M3, E5M2 };

float fp8_max_finite(Fp8Format fmt);

// Round to nearest (ties to even), saturating at the format's max finite
// value. NaN encodes to the format's NaN; +-inf stays inf in E5M2 and
// saturates in E4M3 (which has no infinities).
uint8_t fp8_encode_one(float x, Fp8Format fmt);
float fp8_decode_one(uint8_t b, Fp8Format fmt);

struct Fp8Spec {
    Fp8Format format = Fp8Format::E4M3;
    float scale = 1.0f;  // stored value = encode(x / scale)
};

std::vector<uint8_t> fp8_encode(const Tensor& x, const Fp8Spec& spec);
Tensor fp8_decode(const std::vector<uint8_t>& bytes, const std::vector<int64_t>& shape,
                  const Fp8Spec& spec);

// absmax calibration: scale = max|x| / max_finite, or 1 when all samples
// are zero. Feed successive sample batches, then finish().
struct Fp8Calibrator {
    Fp8Format format = Fp8Format::E4M3;
    float max_abs = 0.0f;
    bool any = false;

    explicit Fp8Calibrator(Fp8Format f) : format(f) {}
    void add(const Tensor& samples);
    Fp8Spec finish() const;
};

}  // namespace plc2
