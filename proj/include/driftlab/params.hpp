#pragma once

#include <string>
#include <utility>
#include <vector>

#include "driftlab/autodiff.hpp"

namespace driftlab {

/// Ordered named tensors; order is part of the serialized form.
class ParamStore {
  public:
    void add(std::string name, ad::Tensor value);
    ad::Tensor& get(const std::string& name);
    const ad::Tensor& get(const std::string& name) const;
    bool contains(const std::string& name) const;

    std::size_t size() const { return entries_.size(); }
    /// Total number of scalar parameters.
    std::size_t count() const;

    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

    friend bool operator==(const ParamStore&, const ParamStore&) = default;

  private:
    std::vector<std::pair<std::string, ad::Tensor>> entries_;
};

/// "DPRM": magic, u32 version=1, u32 n_records, then per record u32 name length, name bytes,
/// u32 rank, u32 dims[rank], f64 data.
std::vector<char> encode_params(const ParamStore& params);
ParamStore decode_params(std::vector<char> bytes, const std::string& what = "params");
void write_params(const ParamStore& params, const std::string& path);
ParamStore read_params(const std::string& path);

} // namespace driftlab
