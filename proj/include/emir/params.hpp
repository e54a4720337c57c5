#pragma once

#include <map>
#include <string>

#include "emir/common.hpp"
#include "emir/tensor.hpp"

namespace emir {

// Named trainable parameters, map-ordered so every traversal is
// deterministic.
struct ParamStore {
  std::map<std::string, Tensor> params;

  Tensor& at(const std::string& name) {
    auto it = params.find(name);
    check(it != params.end(), "ParamStore: missing parameter " + name);
    return it->second;
  }
  const Tensor& at(const std::string& name) const {
    auto it = params.find(name);
    check(it != params.end(), "ParamStore: missing parameter " + name);
    return it->second;
  }

  Tensor create(const std::string& name, Tensor t) {
    check(!params.count(name), "ParamStore: duplicate parameter " + name);
    t.set_requires_grad(true);
    params.emplace(name, t);
    return t;
  }

  std::int64_t param_count() const {
    std::int64_t n = 0;
    for (const auto& [k, v] : params) n += v.numel();
    return n;
  }

  void zero_grad() {
    for (auto& [k, v] : params) v.zero_grad();
  }
};

// fan-in scaled uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)]
Tensor fanin_uniform(const Shape& s, std::int64_t fan_in, Rng& rng);

// Raw tensor file ("ETSR"): magic, version byte (1 = f32 payload,
// 2 = f64 payload), rank u32 LE, extents u32 LE, data LE.
void write_etsr(const Tensor& t, const std::string& path, int version = 1);
Tensor read_etsr(const std::string& path);
// stream variants used by the checkpoint container
void write_etsr_stream(const Tensor& t, std::ostream& os, int version);
Tensor read_etsr_stream(std::istream& is);

}  // namespace emir
