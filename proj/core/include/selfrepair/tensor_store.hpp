#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace selfrepair {

/// One named F32 tensor inside a container file.
struct NamedTensor {
    std::vector<std::int64_t> shape;
    std::vector<float> data; // row-major, little-endian on disk

    std::int64_t numel() const;
};

/// Named-tensor container: an 8-byte little-endian header length N, N bytes of
/// UTF-8 JSON mapping tensor name -> {dtype, shape, data_offsets}, then the raw
/// tensor payload. The layout is compatible with the common safetensors
/// container. Only dtype F32 is supported. An optional "__metadata__" object
/// carries string key/value pairs.
struct TensorStore {
    std::map<std::string, NamedTensor> tensors;        // sorted: deterministic writes
    std::map<std::string, std::string> metadata;       // optional string pairs

    bool contains(const std::string& name) const { return tensors.count(name) != 0; }
};

/// Reads a container file. Throws DataError naming the file and the problem
/// (bad header, non-F32 dtype, offsets out of range, truncated payload).
TensorStore read_tensor_store(const std::filesystem::path& path);

/// Writes a container file; tensors are laid out in name order so identical
/// stores produce identical bytes. Throws DataError on I/O failure.
void write_tensor_store(const TensorStore& store, const std::filesystem::path& path);

} // namespace selfrepair
