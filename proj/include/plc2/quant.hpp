#pragma once

#include "plc2/checkpoint.hpp"
#include "plc2/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace plc2 {

// Group-wise asymmetric INT4 weights. Codes live in [0, 15], two per byte
// (even element index in the low nibble), and dequantize as
// code * scale + zero with one (scale, zero) pair per row-group.
struct QuantTensor {
    std::vector<int64_t> shape;  // [rows, cols]
    int group_size = 128;
    std::vector<uint8_t> codes;        // ceil(rows*cols / 2) bytes, row-major
    std::vector<float> scales;         // [rows * n_groups]
    std::vector<float> zero_points;    // [rows * n_groups]

    int64_t rows() const { return shape[0]; }
    int64_t cols() const { return shape[1]; }
    int64_t n_groups() const { return (cols() + group_size - 1) / group_size; }
};

std::vector<uint8_t> int4_pack(const std::vector<uint8_t>& codes);
std::vector<uint8_t> int4_unpack(const std::vector<uint8_t>& bytes, int64_t n);

// Per-group min/max affine quantization, nearest rounding. A constant group
// degenerates to scale 1 / zero = value so it reconstructs exactly.
QuantTensor quantize_rtn(const Tensor& w, int group_size = 128);

// GPTQ: column-wise quantization with the remaining columns compensated for
// the rounding error, weighted by the inverse Hessian of the layer inputs
// (H = 2 X^T X + damp * mean(diag) * I, Cholesky form).
QuantTensor gptq_quantize(const Tensor& w, const Tensor& calib_inputs, int group_size = 128,
                          double damp = 0.01);

Tensor dequantize(const QuantTensor& q);

TensorEntry quant_to_entry(const QuantTensor& q);
QuantTensor entry_to_quant(const TensorEntry& e);

// Weight-quantization eligibility: 2-D ".weight" tensors, excluding the
// depthwise conv kernels and anything under 1024 elements.
bool quant_eligible(const std::string& name, const std::vector<int64_t>& shape);

// Quantizes every eligible f32 tensor of a checkpoint. With nonempty
// calib_tokens, tensors observed as linears during a calibration forward
// pass go through GPTQ; the rest (embeddings included) use RTN.
Checkpoint quantize_checkpoint(const Checkpoint& ck, const std::vector<int>& calib_tokens,
                               int group_size = 128, double damp = 0.01);

// Expands int4g and fp8 entries back to plain f32 entries.
Checkpoint dequantize_checkpoint(const Checkpoint& ck);

}  // namespace plc2
