#include "driftlab/params.hpp"

#include <algorithm>

#include "driftlab/binary_io.hpp"
#include "driftlab/error.hpp"

namespace driftlab {

void ParamStore::add(std::string name, ad::Tensor value) {
    if (contains(name)) {
        throw ConfigError("duplicate parameter '" + name + "'");
    }
    entries_.emplace_back(std::move(name), std::move(value));
}

ad::Tensor& ParamStore::get(const std::string& name) {
    return const_cast<ad::Tensor&>(std::as_const(*this).get(name));
}

const ad::Tensor& ParamStore::get(const std::string& name) const {
    const auto it = std::find_if(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == name; });
    if (it == entries_.end()) {
        throw ConfigError("unknown parameter '" + name + "'");
    }
    return it->second;
}

bool ParamStore::contains(const std::string& name) const {
    return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == name; });
}

std::size_t ParamStore::count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : entries_) {
        n += t.size();
    }
    return n;
}

std::vector<char> encode_params(const ParamStore& params) {
    BinaryWriter w;
    w.magic("DPRM");
    w.u32(1);
    w.u32(static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, t] : params) {
        w.u32(static_cast<std::uint32_t>(name.size()));
        w.raw(name);
        w.u32(static_cast<std::uint32_t>(t.shape.size()));
        for (int d : t.shape) {
            w.u32(static_cast<std::uint32_t>(d));
        }
        w.f64s(t.data);
    }
    return w.bytes();
}

ParamStore decode_params(std::vector<char> bytes, const std::string& what) {
    BinaryReader r(std::move(bytes), what);
    r.expect_magic("DPRM");
    if (const auto version = r.u32(); version != 1) {
        throw FormatError(what + ": unsupported DPRM version " + std::to_string(version));
    }
    const std::uint32_t n = r.u32();
    ParamStore store;
    for (std::uint32_t i = 0; i < n; ++i) {
        const std::uint32_t len = r.u32();
        std::string name = r.raw(len);
        const std::uint32_t rank = r.u32();
        if (rank > 8) {
            throw FormatError(what + ": implausible rank " + std::to_string(rank) + " for '" + name + "'");
        }
        ad::Shape shape;
        for (std::uint32_t k = 0; k < rank; ++k) {
            shape.push_back(static_cast<int>(r.u32()));
        }
        std::vector<double> data(ad::numel(shape));
        r.f64s(data);
        store.add(std::move(name), ad::Tensor(std::move(shape), std::move(data)));
    }
    r.expect_end();
    return store;
}

void write_params(const ParamStore& params, const std::string& path) {
    write_file_bytes(path, encode_params(params));
}

ParamStore read_params(const std::string& path) { return decode_params(read_file_bytes(path), path); }

} // namespace driftlab
