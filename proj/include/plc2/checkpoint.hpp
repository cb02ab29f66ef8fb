#pragma once

#include "plc2/common.hpp"
#include "plc2/config.hpp"
#include "plc2/tensor.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace plc2 {

// On-disk container:
//   "PLC2" | version u32 LE | meta_len u64 LE | metadata JSON | payload
// The payload starts at the first 64-byte boundary after the metadata and
// every region inside it is 64-byte aligned. Region offsets in the metadata
// are relative to the payload start. Each tensor carries a CRC32 over its
// data, scales, and zeros regions concatenated in that order.
inline constexpr uint32_t kCheckpointVersion = 1;

enum class Dtype { F32, Int4g, Fp8e4m3, Fp8e5m2 };

const char* dtype_name(Dtype d);
Dtype dtype_from_name(const std::string& s);
// bytes required for one tensor's main data region
int64_t dtype_data_bytes(Dtype d, int64_t numel);

struct TensorEntry {
    Dtype dtype = Dtype::F32;
    std::vector<int64_t> shape;
    std::vector<uint8_t> data;    // raw little-endian payload
    int group_size = 0;           // int4g only: input-dim group width
    std::vector<float> scales;    // int4g: per (row, group); fp8: single scale
    std::vector<float> zeros;     // int4g: per (row, group)

    int64_t numel() const {
        int64_t n = 1;
        for (int64_t d : shape) n *= d;
        return n;
    }
    Tensor as_f32() const;                 // dtype must be F32
    static TensorEntry from_f32(const Tensor& t);
};

struct Checkpoint {
    ModelConfig config;
    std::map<std::string, TensorEntry> tensors;
};

// CRC-32 (polynomial 0xEDB88320, the zlib one). Incremental: feed the
// previous return value back in as `crc`.
uint32_t crc32(const void* data, size_t len, uint32_t crc = 0);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// FNV-1a over every tensor's payload bytes in name order; detects any
// parameter mutation without comparing files.
uint64_t checkpoint_payload_hash(const Checkpoint& ckpt);

// Writes via a temp file in the same directory, then renames into place.
void atomic_write_file(const std::string& path, const void* data, size_t len);

}  // namespace plc2
