#include "plc2/fp8.hpp"

#include <cmath>
#include <limits>

namespace plc2 {

namespace {

struct Layout {
    int mbits;
    int bias;
    int emax;  // exponent of the largest finite binade
};

Layout layout(Fp8Format fmt) {
    return fmt == Fp8Format::E4M3 ? Layout{3, 7, 8} : Layout{2, 15, 15};
}

}  // namespace

float fp8_max_finite(Fp8Format fmt) {
    return fmt == Fp8Format::E4M3 ? 448.0f : 57344.0f;
}

uint8_t fp8_encode_one(float x, Fp8Format fmt) {
    const Layout L = layout(fmt);
    if (std::isnan(x)) return fmt == Fp8Format::E4M3 ? 0x7f : 0x7e;
    uint8_t sign = std::signbit(x) ? 0x80 : 0x00;
    if (std::isinf(x)) {
        if (fmt == Fp8Format::E5M2) return sign | 0x7c;
        return sign | 0x7e;  // E4M3 has no inf: saturate
    }
    double a = std::abs(double(x));
    double maxf = fp8_max_finite(fmt);
    if (a > maxf) a = maxf;
    double min_normal = std::ldexp(1.0, 1 - L.bias);
    if (a < min_normal) {
        // subnormal grid; a rounded up to 2^mbits lands exactly on the
        // smallest normal code
        double quantum = std::ldexp(1.0, 1 - L.bias - L.mbits);
        int q = int(std::nearbyint(a / quantum));
        return sign | uint8_t(q);
    }
    int e = std::ilogb(a);
    int m = int(std::nearbyint((std::ldexp(a, -e) - 1.0) * double(1 << L.mbits)));
    if (m == (1 << L.mbits)) {
        m = 0;
        e++;
    }
    // clamping above makes e > emax impossible
    return sign | uint8_t(((e + L.bias) << L.mbits) | m);
}

float fp8_decode_one(uint8_t b, Fp8Format fmt) {
    const Layout L = layout(fmt);
    float sign = (b & 0x80) ? -1.0f : 1.0f;
    int ef = (b >> L.mbits) & ((1 << (fmt == Fp8Format::E4M3 ? 4 : 5)) - 1);
    int m = b & ((1 << L.mbits) - 1);
    if (fmt == Fp8Format::E4M3) {
        if (ef == 15 && m == 7) return std::numeric_limits<float>::quiet_NaN();
    } else {
        if (ef == 31) {
            if (m == 0) return sign * std::numeric_limits<float>::infinity();
            return std::numeric_limits<float>::quiet_NaN();
        }
    }
    if (ef == 0) return sign * float(std::ldexp(double(m), 1 - L.bias - L.mbits));
    return sign * float(std::ldexp(1.0 + double(m) / double(1 << L.mbits), ef - L.bias));
}

std::vector<uint8_t> fp8_encode(const Tensor& x, const Fp8Spec& spec) {
    check(spec.scale > 0, ErrKind::Config, "fp8 scale must be positive");
    std::vector<uint8_t> out(x.data.size());
    for (size_t i = 0; i < x.data.size(); i++)
        out[i] = fp8_encode_one(x.data[i] / spec.scale, spec.format);
    return out;
}

Tensor fp8_decode(const std::vector<uint8_t>& bytes, const std::vector<int64_t>& shape,
                  const Fp8Spec& spec) {
    check(spec.scale > 0, ErrKind::Config, "fp8 scale must be positive");
    Tensor t(shape);
    check(t.data.size() == bytes.size(), ErrKind::Shape, "fp8 decode size mismatch");
    for (size_t i = 0; i < bytes.size(); i++)
        t.data[i] = fp8_decode_one(bytes[i], spec.format) * spec.scale;
    return t;
}

void Fp8Calibrator::add(const Tensor& samples) {
    for (float v : samples.data) {
        check(!std::isnan(v), ErrKind::Numeric, "NaN in fp8 calibration samples");
        max_abs = std::max(max_abs, std::abs(v));
        any = true;
    }
}

Fp8Spec Fp8Calibrator::finish() const {
    check(any, ErrKind::Input, "fp8 calibration needs at least one sample");
    Fp8Spec spec;
    spec.format = format;
    spec.scale = max_abs == 0.0f ? 1.0f : max_abs / fp8_max_finite(format);
    return spec;
}

}  // namespace plc2
