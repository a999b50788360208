#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "musefm/adcore.hpp"

namespace musefm::ad {

struct Parameter {
  std::string name;   // unique path, e.g. "backbone.block0.attn.wq"
  std::string group;  // scene_encoder | hypernet | backbone | embeddings
  std::string init;   // uniform_fan_in | zeros | ones | ...
  Tensor tensor;
};

/// Ordered collection of trainable parameters plus named non-trainable buffers.
class ParameterStore {
public:
  Tensor& add(const std::string& name, const std::string& group, const std::string& init, Shape shape,
              std::vector<double> values);
  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), scaled by `gain`.
  Tensor& add_uniform(const std::string& name, const std::string& group, Shape shape, std::size_t fan_in,
                      std::uint64_t& rng_state, double gain = 1.0);
  Tensor& add_constant(const std::string& name, const std::string& group, Shape shape, double value);

  std::vector<Parameter>& params() { return params_; }
  const std::vector<Parameter>& params() const { return params_; }
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  /// Non-trainable state saved with the checkpoint (e.g. running statistics).
  std::map<std::string, std::vector<double>>& buffers() { return buffers_; }
  const std::map<std::string, std::vector<double>>& buffers() const { return buffers_; }

  void zero_grad();
  double grad_norm() const;
  double group_grad_norm(const std::string& group) const;
  std::size_t count() const;

  /// Deep copy of values (fresh leaves, zero gradients).
  ParameterStore clone() const;

  /// Writes `<prefix>.index` (text) and `<prefix>.bin` (little-endian float64).
  void save(const std::filesystem::path& prefix) const;
  /// Loads values into existing parameters; names and shapes must match exactly.
  void load(const std::filesystem::path& prefix);

private:
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
  std::map<std::string, std::vector<double>> buffers_;
};

/// Deterministic uniform double in [0, 1) advancing a splitmix state.
double next_uniform(std::uint64_t& state);

}  // namespace musefm::ad
