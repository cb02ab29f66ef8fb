#include "plc2/quant.hpp"

#include "plc2/fp8.hpp"
#include "plc2/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace plc2 {

std::vector<uint8_t> int4_pack(const std::vector<uint8_t>& codes) {
    std::vector<uint8_t> out((codes.size() + 1) / 2, 0);
    for (size_t i = 0; i < codes.size(); i++) {
        check(codes[i] <= 15, ErrKind::Input, "int4 code out of range");
        if (i % 2 == 0) out[i / 2] = codes[i];
        else out[i / 2] = uint8_t(out[i / 2] | (codes[i] << 4));
    }
    return out;
}

std::vector<uint8_t> int4_unpack(const std::vector<uint8_t>& bytes, int64_t n) {
    check(int64_t(bytes.size()) == (n + 1) / 2, ErrKind::Format, "int4 byte count mismatch");
    std::vector<uint8_t> out(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; i++) {
        uint8_t b = bytes[size_t(i / 2)];
        out[size_t(i)] = (i % 2 == 0) ? uint8_t(b & 0x0f) : uint8_t(b >> 4);
    }
    return out;
}

namespace {

// group parameters from a span of current weight values
void group_params(const double* vals, int64_t n, float* scale, float* zero) {
    double mn = vals[0], mx = vals[0];
    for (int64_t i = 1; i < n; i++) {
        mn = std::min(mn, vals[i]);
        mx = std::max(mx, vals[i]);
    }
    if (mx == mn) {
        *scale = 1.0f;
        *zero = float(mn);
    } else {
        *scale = float((mx - mn) / 15.0);
        *zero = float(mn);
    }
}

uint8_t encode_one(double v, float scale, float zero) {
    double q = std::nearbyint((v - double(zero)) / double(scale));
    q = std::clamp(q, 0.0, 15.0);
    return uint8_t(q);
}

void validate_quant_input(const Tensor& w, int group_size) {
    check(w.ndim() == 2, ErrKind::Shape, "weight quantization expects a 2-D tensor");
    check(w.numel() > 0, ErrKind::Input, "cannot quantize an empty tensor");
    check(group_size >= 1, ErrKind::Config, "group_size must be positive");
}

}  // namespace

QuantTensor quantize_rtn(const Tensor& w, int group_size) {
    validate_quant_input(w, group_size);
    const int64_t rows = w.shape[0], cols = w.shape[1];
    QuantTensor q;
    q.shape = w.shape;
    q.group_size = group_size;
    q.scales.resize(size_t(rows * q.n_groups()));
    q.zero_points.resize(size_t(rows * q.n_groups()));

    std::vector<uint8_t> codes(size_t(rows * cols));
    std::vector<double> buf(size_t(std::min<int64_t>(cols, group_size)));
    for (int64_t r = 0; r < rows; r++) {
        for (int64_t g = 0; g < q.n_groups(); g++) {
            int64_t lo = g * group_size, hi = std::min(cols, lo + group_size);
            for (int64_t c = lo; c < hi; c++) buf[size_t(c - lo)] = double(w.at(r, c));
            float scale, zero;
            group_params(buf.data(), hi - lo, &scale, &zero);
            q.scales[size_t(r * q.n_groups() + g)] = scale;
            q.zero_points[size_t(r * q.n_groups() + g)] = zero;
            for (int64_t c = lo; c < hi; c++)
                codes[size_t(r * cols + c)] = encode_one(double(w.at(r, c)), scale, zero);
        }
    }
    q.codes = int4_pack(codes);
    return q;
}

QuantTensor gptq_quantize(const Tensor& w, const Tensor& calib_inputs, int group_size,
                          double damp) {
    validate_quant_input(w, group_size);
    check(calib_inputs.ndim() == 2 && calib_inputs.shape[1] == w.shape[1], ErrKind::Shape,
          "calibration inputs must be [n, in] matching the weight's input dim");
    check(calib_inputs.shape[0] >= 1, ErrKind::Input, "need at least one calibration row");
    check(damp > 0, ErrKind::Config, "damp must be positive");
    const int64_t rows = w.shape[0], cols = w.shape[1], n = calib_inputs.shape[0];

    // H = 2 X^T X + damp * mean(diag) * I, in double
    std::vector<double> H(size_t(cols * cols), 0.0);
    for (int64_t s = 0; s < n; s++)
        for (int64_t i = 0; i < cols; i++) {
            double xi = 2.0 * double(calib_inputs.at(s, i));
            if (xi == 0.0) continue;
            for (int64_t j = i; j < cols; j++)
                H[size_t(i * cols + j)] += xi * double(calib_inputs.at(s, j));
        }
    for (int64_t i = 0; i < cols; i++)
        for (int64_t j = 0; j < i; j++) H[size_t(i * cols + j)] = H[size_t(j * cols + i)];
    double mean_diag = 0;
    for (int64_t i = 0; i < cols; i++) mean_diag += H[size_t(i * cols + i)];
    mean_diag /= double(cols);
    check(mean_diag > 0, ErrKind::Numeric,
          "calibration Hessian is singular (all-zero calibration inputs)");
    for (int64_t i = 0; i < cols; i++) H[size_t(i * cols + i)] += damp * mean_diag;

    // Cholesky H = L L^T, in place in the lower triangle
    auto cholesky = [cols](std::vector<double>& A, const char* what) {
        for (int64_t j = 0; j < cols; j++) {
            double d = A[size_t(j * cols + j)];
            for (int64_t k = 0; k < j; k++) d -= A[size_t(j * cols + k)] * A[size_t(j * cols + k)];
            check(d > 0, ErrKind::Numeric, std::string(what) + " is not positive definite");
            double dj = std::sqrt(d);
            A[size_t(j * cols + j)] = dj;
            for (int64_t i = j + 1; i < cols; i++) {
                double v = A[size_t(i * cols + j)];
                for (int64_t k = 0; k < j; k++)
                    v -= A[size_t(i * cols + k)] * A[size_t(j * cols + k)];
                A[size_t(i * cols + j)] = v / dj;
            }
        }
    };
    cholesky(H, "damped Hessian");

    // Hinv = H^{-1} column by column: L y = e_k, then L^T z = y
    std::vector<double> Hinv(size_t(cols * cols));
    std::vector<double> y(static_cast<size_t>(cols));
    for (int64_t k = 0; k < cols; k++) {
        for (int64_t i = 0; i < cols; i++) {
            double v = i == k ? 1.0 : 0.0;
            for (int64_t j = 0; j < i; j++) v -= H[size_t(i * cols + j)] * y[size_t(j)];
            y[size_t(i)] = v / H[size_t(i * cols + i)];
        }
        for (int64_t i = cols - 1; i >= 0; i--) {
            double v = y[size_t(i)];
            for (int64_t j = i + 1; j < cols; j++)
                v -= H[size_t(j * cols + i)] * Hinv[size_t(j * cols + k)];
            Hinv[size_t(i * cols + k)] = v / H[size_t(i * cols + i)];
        }
    }

    // lower Cholesky M of Hinv; the upper factor used below is U = M^T
    cholesky(Hinv, "inverse Hessian");

    // column-wise quantize with error propagation into the remaining columns
    std::vector<double> W(size_t(rows * cols));
    for (int64_t r = 0; r < rows; r++)
        for (int64_t c = 0; c < cols; c++) W[size_t(r * cols + c)] = double(w.at(r, c));

    QuantTensor q;
    q.shape = w.shape;
    q.group_size = group_size;
    const int64_t groups = q.n_groups();
    q.scales.resize(size_t(rows * groups));
    q.zero_points.resize(size_t(rows * groups));
    std::vector<uint8_t> codes(size_t(rows * cols));
    std::vector<double> buf(size_t(std::min<int64_t>(cols, group_size)));

    for (int64_t c = 0; c < cols; c++) {
        int64_t g = c / group_size;
        if (c % group_size == 0) {
            // group parameters from the current (compensated) values
            int64_t hi = std::min(cols, c + group_size);
            for (int64_t r = 0; r < rows; r++) {
                for (int64_t j = c; j < hi; j++) buf[size_t(j - c)] = W[size_t(r * cols + j)];
                group_params(buf.data(), hi - c, &q.scales[size_t(r * groups + g)],
                             &q.zero_points[size_t(r * groups + g)]);
            }
        }
        double d = Hinv[size_t(c * cols + c)];  // U[c,c] = M[c,c]
        for (int64_t r = 0; r < rows; r++) {
            float scale = q.scales[size_t(r * groups + g)];
            float zero = q.zero_points[size_t(r * groups + g)];
            double v = W[size_t(r * cols + c)];
            uint8_t code = encode_one(v, scale, zero);
            codes[size_t(r * cols + c)] = code;
            double err = (v - (double(code) * double(scale) + double(zero))) / d;
            // U[c, j] = M[j, c] for j >= c; the j == c term zeroes this column's error
            for (int64_t j = c; j < cols; j++)
                W[size_t(r * cols + j)] -= err * Hinv[size_t(j * cols + c)];
        }
    }
    q.codes = int4_pack(codes);
    return q;
}

Tensor dequantize(const QuantTensor& q) {
    Tensor out(q.shape);
    const int64_t rows = q.rows(), cols = q.cols(), groups = q.n_groups();
    std::vector<uint8_t> codes = int4_unpack(q.codes, rows * cols);
    for (int64_t r = 0; r < rows; r++)
        for (int64_t c = 0; c < cols; c++) {
            int64_t g = c / q.group_size;
            float scale = q.scales[size_t(r * groups + g)];
            float zero = q.zero_points[size_t(r * groups + g)];
            out.at(r, c) = float(codes[size_t(r * cols + c)]) * scale + zero;
        }
    return out;
}

TensorEntry quant_to_entry(const QuantTensor& q) {
    TensorEntry e;
    e.dtype = Dtype::Int4g;
    e.shape = q.shape;
    e.group_size = q.group_size;
    e.data = q.codes;
    e.scales = q.scales;
    e.zeros = q.zero_points;
    return e;
}

QuantTensor entry_to_quant(const TensorEntry& e) {
    check(e.dtype == Dtype::Int4g, ErrKind::Format, "entry is not int4g");
    check(e.shape.size() == 2 && e.group_size >= 1, ErrKind::Format, "malformed int4g entry");
    QuantTensor q;
    q.shape = e.shape;
    q.group_size = e.group_size;
    q.codes = e.data;
    q.scales = e.scales;
    q.zero_points = e.zeros;
    return q;
}

bool quant_eligible(const std::string& name, const std::vector<int64_t>& shape) {
    if (shape.size() != 2) return false;
    static const std::string suffix = ".weight";
    if (name.size() < suffix.size() ||
        name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0)
        return false;
    if (name.find("conv") != std::string::npos) return false;
    return shape[0] * shape[1] >= 1024;
}

Checkpoint quantize_checkpoint(const Checkpoint& ck, const std::vector<int>& calib_tokens,
                               int group_size, double damp) {
    ModelParams p = params_from_checkpoint(ck);

    // one calibration pass collects the input rows seen by every linear
    std::map<std::string, Tensor> inputs;
    if (!calib_tokens.empty()) {
        ForwardTaps<float> taps;
        taps.linear_input = [&](const std::string& name, const Tensor& x) {
            Tensor& dst = inputs[name];
            if (dst.data.empty()) {
                dst = x;
                return;
            }
            check(dst.shape[1] == x.shape[1], ErrKind::Shape, "calibration width changed");
            dst.shape[0] += x.shape[0];
            dst.data.insert(dst.data.end(), x.data.begin(), x.data.end());
        };
        SessionT<float> s = make_session<float>(ck.config);
        model_forward(p, s, calib_tokens, &taps);
    }

    Checkpoint out;
    out.config = ck.config;
    for (const auto& [name, e] : ck.tensors) {
        if (e.dtype == Dtype::F32 && quant_eligible(name, e.shape)) {
            Tensor w = e.as_f32();
            auto it = inputs.find(name);
            QuantTensor q = it != inputs.end() ? gptq_quantize(w, it->second, group_size, damp)
                                               : quantize_rtn(w, group_size);
            out.tensors[name] = quant_to_entry(q);
        } else {
            out.tensors[name] = e;
        }
    }
    return out;
}

Checkpoint dequantize_checkpoint(const Checkpoint& ck) {
    Checkpoint out;
    out.config = ck.config;
    for (const auto& [name, e] : ck.tensors) {
        if (e.dtype == Dtype::Int4g) {
            out.tensors[name] = TensorEntry::from_f32(dequantize(entry_to_quant(e)));
        } else if (e.dtype == Dtype::Fp8e4m3 || e.dtype == Dtype::Fp8e5m2) {
            Fp8Spec spec;
            spec.format = e.dtype == Dtype::Fp8e4m3 ? Fp8Format::E4M3 : Fp8Format::E5M2;
            spec.scale = e.scales.at(0);
            out.tensors[name] = TensorEntry::from_f32(fp8_decode(e.data, e.shape, spec));
        } else {
            out.tensors[name] = e;
        }
    }
    return out;
}

}  // namespace plc2
