// Copyright (C) 2026 The qtune Authors
// SPDX-License-Identifier: Apache-2.0

#include "qtune/container.hpp"

#include "qtune/error.hpp"
#include "qtune/packing.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <set>

namespace qtune {

namespace {

constexpr std::uint8_t kDtypeFloat32 = 0;
constexpr std::uint8_t kDtypeQuantized = 1;
constexpr char kMagic[4] = {'P', 'Q', 'T', 'N'};

class Writer {
public:
    void u8(std::uint8_t v) { out_.push_back(v); }
    void u16(std::uint16_t v) { le(v, 2); }
    void u32(std::uint32_t v) { le(v, 4); }
    void u64(std::uint64_t v) { le(v, 8); }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void bytes(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }

    std::vector<std::uint8_t> take() { return std::move(out_); }

private:
    void le(std::uint64_t v, int n)
    {
        for (int i = 0; i < n; ++i) {
            out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
        }
    }
    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}

    std::uint8_t u8() { return static_cast<std::uint8_t>(le(1)); }
    std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
    std::uint64_t u64() { return le(8); }
    float f32() { return std::bit_cast<float>(u32()); }

    std::span<const std::uint8_t> bytes(std::size_t n)
    {
        need(n);
        auto s = b_.subspan(pos_, n);
        pos_ += n;
        return s;
    }

    std::size_t remaining() const noexcept { return b_.size() - pos_; }

    void need(std::size_t n) const
    {
        if (remaining() < n) {
            throw Error("truncated container: need " + std::to_string(n) + " more bytes at offset " +
                        std::to_string(pos_) + ", have " + std::to_string(remaining()));
        }
    }

private:
    std::uint64_t le(int n)
    {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) {
            v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
        }
        pos_ += static_cast<std::size_t>(n);
        return v;
    }

    std::span<const std::uint8_t> b_;
    std::size_t pos_ = 0;
};

void write_header(Writer& w, const std::string& name, std::uint8_t dtype, std::size_t rows, std::size_t cols)
{
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) {
        throw Error("tensor name too long: " + name.substr(0, 32) + "...");
    }
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.bytes({reinterpret_cast<const std::uint8_t*>(name.data()), name.size()});
    w.u8(dtype);
    w.u8(2);
    w.u64(rows);
    w.u64(cols);
}

NamedTensor read_tensor(Reader& r)
{
    NamedTensor t;
    const std::uint16_t name_len = r.u16();
    const auto name_bytes = r.bytes(name_len);
    t.name.assign(name_bytes.begin(), name_bytes.end());
    const std::uint8_t dtype = r.u8();
    if (dtype != kDtypeFloat32 && dtype != kDtypeQuantized) {
        throw Error("unknown dtype code " + std::to_string(dtype) + " for tensor '" + t.name + "'");
    }
    const std::uint8_t rank = r.u8();
    if (rank != 1 && rank != 2) {
        throw Error("unsupported rank " + std::to_string(rank) + " for tensor '" + t.name + "'");
    }
    std::uint64_t dims[2] = {1, 1};
    for (std::uint8_t i = 0; i < rank; ++i) {
        dims[rank == 1 ? 1 : i] = r.u64();
    }
    const std::uint64_t rows = dims[0];
    const std::uint64_t cols = dims[1];
    if (rows == 0 || cols == 0) {
        throw Error("tensor '" + t.name + "' has a zero dimension");
    }
    // Bound element count by what the remaining payload could possibly hold.
    const std::uint64_t max_elements = static_cast<std::uint64_t>(r.remaining()) * 8;
    if (rows > max_elements || cols > max_elements / rows) {
        throw Error("truncated container: tensor '" + t.name + "' dims exceed payload");
    }
    const std::size_t elements = static_cast<std::size_t>(rows * cols);

    if (dtype == kDtypeFloat32) {
        r.need(elements * 4);
        std::vector<float> data(elements);
        for (float& v : data) {
            v = r.f32();
            if (!std::isfinite(v)) {
                throw Error("non-finite float32 value in tensor '" + t.name + "'");
            }
        }
        t.value = Matrix(rows, cols, std::move(data));
        return t;
    }

    const std::uint8_t bits = r.u8();
    if (bits != 2 && bits != 4 && bits != 8) {
        throw Error("invalid bit-width " + std::to_string(bits) + " in tensor '" + t.name + "'");
    }
    const std::uint8_t gran_code = r.u8();
    if (gran_code > 1) {
        throw Error("invalid granularity code " + std::to_string(gran_code) + " in tensor '" + t.name + "'");
    }
    const Granularity gran = gran_code == 0 ? Granularity::PerTensor : Granularity::PerRow;
    const std::uint32_t groups = r.u32();
    if (groups != group_count_for(static_cast<std::size_t>(rows), gran)) {
        throw Error("group count " + std::to_string(groups) + " does not match granularity of tensor '" + t.name +
                    "'");
    }
    r.need(static_cast<std::size_t>(groups) * 6);
    QuantParams params;
    params.alphas.resize(groups);
    params.zeros.resize(groups);
    for (float& a : params.alphas) {
        a = r.f32();
        if (!(a > 0.0f) || !std::isfinite(a)) {
            throw Error("invalid scaling factor in tensor '" + t.name + "'");
        }
    }
    const unsigned max_code = (1U << bits) - 1U;
    for (auto& z : params.zeros) {
        z = r.u16();
        if (z > max_code) {
            throw Error("zero-point " + std::to_string(z) + " out of range in tensor '" + t.name + "'");
        }
    }
    const auto packed = r.bytes(packed_size(elements, bits));
    if (!padding_is_clear(packed, elements, bits)) {
        throw Error("code out of range: nonzero padding bits in tensor '" + t.name + "'");
    }
    t.value = QuantizedTensor(rows, cols, bits, gran, std::move(params),
                              std::vector<std::uint8_t>(packed.begin(), packed.end()));
    return t;
}

} // namespace

std::vector<std::uint8_t> encode_container(const std::vector<NamedTensor>& tensors)
{
    std::set<std::string> seen;
    for (const auto& t : tensors) {
        if (!seen.insert(t.name).second) {
            throw Error("duplicate tensor name '" + t.name + "'");
        }
    }
    if (tensors.size() > std::numeric_limits<std::uint32_t>::max()) {
        throw Error("too many tensors");
    }
    Writer w;
    w.bytes({reinterpret_cast<const std::uint8_t*>(kMagic), 4});
    w.u16(kContainerVersion);
    w.u32(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        if (const auto* m = std::get_if<Matrix>(&t.value)) {
            if (m->empty()) {
                throw Error("cannot store empty tensor '" + t.name + "'");
            }
            write_header(w, t.name, kDtypeFloat32, m->rows(), m->cols());
            for (float v : m->values()) {
                w.f32(v);
            }
        } else {
            const auto& q = std::get<QuantizedTensor>(t.value);
            write_header(w, t.name, kDtypeQuantized, q.rows(), q.cols());
            w.u8(static_cast<std::uint8_t>(q.bits()));
            w.u8(q.granularity() == Granularity::PerRow ? 1 : 0);
            w.u32(static_cast<std::uint32_t>(q.group_count()));
            for (float a : q.params().alphas) {
                w.f32(a);
            }
            for (std::uint16_t z : q.params().zeros) {
                w.u16(z);
            }
            w.bytes(q.packed());
        }
    }
    return w.take();
}

std::vector<NamedTensor> decode_container(std::span<const std::uint8_t> bytes)
{
    Reader r(bytes);
    if (bytes.size() < 4 || !std::equal(kMagic, kMagic + 4, bytes.begin())) {
        throw Error("bad magic: not a PQTN tensor container");
    }
    r.bytes(4);
    const std::uint16_t version = r.u16();
    if (version != kContainerVersion) {
        throw Error("unsupported container version " + std::to_string(version));
    }
    const std::uint32_t count = r.u32();
    std::vector<NamedTensor> out;
    std::set<std::string> seen;
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor t = read_tensor(r);
        if (!seen.insert(t.name).second) {
            throw Error("duplicate tensor name '" + t.name + "'");
        }
        out.push_back(std::move(t));
    }
    if (r.remaining() != 0) {
        throw Error("trailing bytes after last tensor: " + std::to_string(r.remaining()));
    }
    return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open '" + path.string() + "'");
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents)
{
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw Error("cannot write '" + tmp.string() + "'");
        }
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) {
            throw Error("write failed for '" + tmp.string() + "'");
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw Error("cannot move output into place at '" + path.string() + "'");
    }
}

void save_container(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors)
{
    const auto bytes = encode_container(tensors);
    write_file_atomic(path, {reinterpret_cast<const char*>(bytes.data()), bytes.size()});
}

std::vector<NamedTensor> load_container(const std::filesystem::path& path)
{
    return decode_container(read_file(path));
}

std::vector<NamedTensor> model_tensors(const ToyModel& model)
{
    const auto to_floats = [](const std::vector<double>& v) { return std::vector<float>(v.begin(), v.end()); };
    std::vector<NamedTensor> out;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const ToyLayer& layer = model.layers[l];
        const std::string prefix = "layer" + std::to_string(l + 1) + ".";
        if (const auto* d = std::get_if<DenseLinear>(&layer.weight)) {
            out.push_back({prefix + "weight", Matrix(d->rows, d->cols, to_floats(d->weight))});
        } else {
            const auto& q = std::get<QuantizedLinear>(layer.weight);
            out.push_back({prefix + "weight", q.current_base()});
            const auto& dims = q.trainable_dims.dims;
            if (!dims.empty()) {
                std::vector<float> idx(dims.begin(), dims.end());
                out.push_back({prefix + "dims", Matrix(1, dims.size(), std::move(idx))});
                out.push_back({prefix + "trainable", Matrix(q.rows(), dims.size(), to_floats(q.trainable_values))});
            }
        }
        out.push_back({prefix + "bias", Matrix(1, layer.bias.size(), to_floats(layer.bias))});
    }
    return out;
}

} // namespace qtune
