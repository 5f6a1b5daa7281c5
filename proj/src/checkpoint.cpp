#include "gwf/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace gwf {

namespace {

static_assert(std::endian::native == std::endian::little ||
                  std::endian::native == std::endian::big,
              "mixed-endian platforms unsupported");

template <typename T>
void write_le(std::ostream& os, T v) {
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big)
        std::reverse(buf, buf + sizeof(T));
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
    unsigned char buf[sizeof(T)];
    is.read(reinterpret_cast<char*>(buf), sizeof(T));
    if constexpr (std::endian::native == std::endian::big)
        std::reverse(buf, buf + sizeof(T));
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
}

constexpr char kMagic[4] = {'G', 'W', 'F', '1'};

}  // namespace

Tensor& ParamStore::add(const std::string& name, Tensor t) {
    if (!t.defined() || !t.requires_grad())
        throw ShapeError("ParamStore::add: parameter '" + name + "' must require grad");
    if (find(name)) throw ShapeError("ParamStore::add: duplicate name '" + name + "'");
    items_.emplace_back(name, std::move(t));
    return items_.back().second;
}

Tensor* ParamStore::find(const std::string& name) {
    for (auto& [n, t] : items_)
        if (n == name) return &t;
    return nullptr;
}

const Tensor* ParamStore::find(const std::string& name) const {
    for (const auto& [n, t] : items_)
        if (n == name) return &t;
    return nullptr;
}

std::int64_t ParamStore::scalar_count() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : items_) n += t.size();
    return n;
}

void ParamStore::zero_grad() {
    for (auto& [name, t] : items_) t.zero_grad();
}

bool ParamStore::grads_finite(std::string* offender) const {
    for (const auto& [name, t] : items_) {
        if (!t.has_grad()) continue;
        for (double g : t.grad()) {
            if (!std::isfinite(g)) {
                if (offender) *offender = name;
                return false;
            }
        }
    }
    return true;
}

void save_checkpoint(const ParamStore& store, const std::string& path, int precision_bits) {
    if (precision_bits != 32 && precision_bits != 64)
        throw DataError("save_checkpoint: precision must be 32 or 64");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("save_checkpoint: cannot open '" + path + "'");
    os.write(kMagic, 4);
    write_le<std::uint8_t>(os, static_cast<std::uint8_t>(precision_bits));
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(store.tensor_count()));
    for (const auto& [name, t] : store.items()) {
        write_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
        for (int d = 0; d < t.rank(); ++d)
            write_le<std::uint64_t>(os, static_cast<std::uint64_t>(t.dim(d)));
        if (precision_bits == 64) {
            for (std::int64_t i = 0; i < t.size(); ++i) write_le<double>(os, t.at(i));
        } else {
            for (std::int64_t i = 0; i < t.size(); ++i)
                write_le<float>(os, static_cast<float>(t.at(i)));
        }
    }
    if (!os) throw DataError("save_checkpoint: write failed for '" + path + "'");
}

void load_checkpoint(ParamStore& store, const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("load_checkpoint: cannot open '" + path + "'");
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw DataError("load_checkpoint: bad magic in '" + path + "'");
    const int precision = read_le<std::uint8_t>(is);
    if (precision != 32 && precision != 64)
        throw DataError("load_checkpoint: unsupported precision " + std::to_string(precision));
    const auto count = read_le<std::uint32_t>(is);
    if (count != store.tensor_count())
        throw DataError("load_checkpoint: checkpoint has " + std::to_string(count) +
                        " tensors, store expects " + std::to_string(store.tensor_count()));
    for (std::uint32_t ti = 0; ti < count; ++ti) {
        const auto name_len = read_le<std::uint32_t>(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const auto rank = read_le<std::uint32_t>(is);
        Shape shape(rank);
        for (auto& e : shape) e = static_cast<int>(read_le<std::uint64_t>(is));
        if (!is) throw DataError("load_checkpoint: truncated header in '" + path + "'");
        Tensor* dst = store.find(name);
        if (!dst) throw DataError("load_checkpoint: unknown tensor '" + name + "'");
        if (dst->shape() != shape)
            throw DataError("load_checkpoint: tensor '" + name + "' has shape " +
                            shape_str(shape) + ", store expects " + shape_str(dst->shape()));
        for (std::int64_t i = 0; i < dst->size(); ++i) {
            dst->data()[i] = precision == 64 ? read_le<double>(is)
                                             : static_cast<double>(read_le<float>(is));
        }
        if (!is) throw DataError("load_checkpoint: truncated data for '" + name + "'");
    }
}

}  // namespace gwf
