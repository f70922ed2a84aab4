#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "lore/tensor.hpp"

namespace lore {

class io_error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

static_assert(std::endian::native == std::endian::little,
              "tensor blobs are little-endian; big-endian hosts are unsupported");

// Tensor blob: magic "LORT", u32 version, u32 rank, u64 extents[rank],
// f32 little-endian payload.
inline constexpr uint32_t kTensorBlobVersion = 1;

namespace detail {

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const char* what) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw io_error(std::string("truncated read: ") + what);
    return v;
}

}  // namespace detail

inline void write_tensor_blob(std::ostream& os, const Tensor<float>& t) {
    os.write("LORT", 4);
    detail::write_pod(os, kTensorBlobVersion);
    detail::write_pod(os, static_cast<uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) detail::write_pod(os, static_cast<uint64_t>(t.dim(i)));
    os.write(reinterpret_cast<const char*>(t.values().data()),
             static_cast<std::streamsize>(t.numel() * sizeof(float)));
    if (!os) throw io_error("tensor blob write failed");
}

inline Tensor<float> read_tensor_blob(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "LORT", 4) != 0) throw io_error("bad tensor blob magic");
    const auto version = detail::read_pod<uint32_t>(is, "version");
    if (version != kTensorBlobVersion)
        throw io_error("unsupported tensor blob version " + std::to_string(version));
    const auto rank = detail::read_pod<uint32_t>(is, "rank");
    if (rank > 8) throw io_error("implausible tensor rank");
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<int64_t>(detail::read_pod<uint64_t>(is, "extent"));
    std::vector<float> data(static_cast<size_t>(shape_numel(shape)));
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(float)));
    if (!is) throw io_error("truncated tensor blob payload");
    return Tensor<float>::from(std::move(shape), std::move(data));
}

inline void save_tensor(const std::string& path, const Tensor<float>& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error("cannot open for write: " + path);
    write_tensor_blob(os, t);
}

inline Tensor<float> load_tensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot open for read: " + path);
    return read_tensor_blob(is);
}

}  // namespace lore
