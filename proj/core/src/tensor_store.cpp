#include "selfrepair/tensor_store.hpp"

#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "selfrepair/errors.hpp"

namespace selfrepair {

using json = nlohmann::json;

std::int64_t NamedTensor::numel() const {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

namespace {

[[noreturn]] void fail(const std::filesystem::path& path, const std::string& what) {
    throw DataError(path.string() + ": " + what);
}

} // namespace

TensorStore read_tensor_store(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(path, "cannot open file");

    std::uint64_t header_len = 0;
    in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
    if (!in) fail(path, "truncated header length at byte offset 0");
    if (header_len == 0 || header_len > (1ULL << 30))
        fail(path, "implausible header length " + std::to_string(header_len));

    std::string header(header_len, '\0');
    in.read(header.data(), static_cast<std::streamsize>(header_len));
    if (!in) fail(path, "truncated JSON header at byte offset 8");

    json meta;
    try {
        meta = json::parse(header);
    } catch (const json::exception& e) {
        fail(path, std::string("bad JSON header: ") + e.what());
    }
    if (!meta.is_object()) fail(path, "JSON header is not an object");

    TensorStore store;
    const std::uint64_t payload_base = 8 + header_len;
    for (const auto& [name, entry] : meta.items()) {
        if (name == "__metadata__") {
            for (const auto& [k, v] : entry.items()) {
                if (!v.is_string()) fail(path, "__metadata__ values must be strings");
                store.metadata[k] = v.get<std::string>();
            }
            continue;
        }
        if (!entry.is_object() || !entry.contains("dtype") || !entry.contains("shape") ||
            !entry.contains("data_offsets"))
            fail(path, "tensor entry malformed: " + name);
        const std::string dtype = entry["dtype"].get<std::string>();
        if (dtype != "F32") fail(path, "tensor " + name + " has unsupported dtype " + dtype);

        NamedTensor tensor;
        tensor.shape = entry["shape"].get<std::vector<std::int64_t>>();
        const auto offsets = entry["data_offsets"].get<std::vector<std::uint64_t>>();
        if (offsets.size() != 2 || offsets[1] < offsets[0])
            fail(path, "tensor " + name + " has malformed data_offsets");
        const std::uint64_t bytes = offsets[1] - offsets[0];
        if (bytes != static_cast<std::uint64_t>(tensor.numel()) * sizeof(float))
            fail(path, "tensor " + name + " byte span does not match its shape");

        tensor.data.resize(static_cast<std::size_t>(tensor.numel()));
        in.seekg(static_cast<std::streamoff>(payload_base + offsets[0]));
        in.read(reinterpret_cast<char*>(tensor.data.data()),
                static_cast<std::streamsize>(bytes));
        if (!in)
            fail(path, "truncated payload for tensor " + name + " at byte offset " +
                           std::to_string(payload_base + offsets[0]));
        store.tensors.emplace(name, std::move(tensor));
    }
    return store;
}

void write_tensor_store(const TensorStore& store, const std::filesystem::path& path) {
    // Offsets assigned in name order; std::map iteration makes the bytes
    // deterministic.
    json header = json::object();
    if (!store.metadata.empty()) {
        json meta = json::object();
        for (const auto& [k, v] : store.metadata) meta[k] = v;
        header["__metadata__"] = meta;
    }
    std::uint64_t offset = 0;
    for (const auto& [name, tensor] : store.tensors) {
        const std::uint64_t bytes = static_cast<std::uint64_t>(tensor.numel()) * sizeof(float);
        header[name] = {{"dtype", "F32"},
                        {"shape", tensor.shape},
                        {"data_offsets", {offset, offset + bytes}}};
        offset += bytes;
    }
    const std::string header_str = header.dump();
    const std::uint64_t header_len = header_str.size();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError(path.string() + ": cannot open for writing");
    out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for (const auto& [name, tensor] : store.tensors) {
        out.write(reinterpret_cast<const char*>(tensor.data.data()),
                  static_cast<std::streamsize>(tensor.data.size() * sizeof(float)));
    }
    out.flush();
    if (!out) throw DataError(path.string() + ": write failed");
}

} // namespace selfrepair
