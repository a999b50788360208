#include "musefm/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "musefm/common.hpp"

namespace musefm::ad {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

double next_uniform(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ULL;
  return static_cast<double>(mix64(state) >> 11) * 0x1.0p-53;
}

Tensor& ParameterStore::add(const std::string& name, const std::string& group, const std::string& init, Shape shape,
                            std::vector<double> values) {
  if (index_.count(name)) throw ValidationError("duplicate parameter name: " + name);
  index_[name] = params_.size();
  params_.push_back({name, group, init, Tensor::leaf(std::move(shape), std::move(values))});
  return params_.back().tensor;
}

Tensor& ParameterStore::add_uniform(const std::string& name, const std::string& group, Shape shape,
                                    std::size_t fan_in, std::uint64_t& rng_state, double gain) {
  const double bound = gain / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> v(numel(shape));
  for (double& x : v) x = (2.0 * next_uniform(rng_state) - 1.0) * bound;
  return add(name, group, "uniform_fan_in", std::move(shape), std::move(v));
}

Tensor& ParameterStore::add_constant(const std::string& name, const std::string& group, Shape shape, double value) {
  const auto n = numel(shape);
  return add(name, group, value == 0.0 ? "zeros" : "constant", std::move(shape), std::vector<double>(n, value));
}

Parameter& ParameterStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("unknown parameter: " + name);
  return params_[it->second];
}

const Parameter& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("unknown parameter: " + name);
  return params_[it->second];
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

double ParameterStore::grad_norm() const {
  double s = 0.0;
  for (const auto& p : params_)
    for (double g : p.tensor.grad()) s += g * g;
  return std::sqrt(s);
}

double ParameterStore::group_grad_norm(const std::string& group) const {
  double s = 0.0;
  for (const auto& p : params_)
    if (p.group == group)
      for (double g : p.tensor.grad()) s += g * g;
  return std::sqrt(s);
}

std::size_t ParameterStore::count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.size();
  return n;
}

ParameterStore ParameterStore::clone() const {
  ParameterStore out;
  for (const auto& p : params_)
    out.add(p.name, p.group, p.init, p.tensor.shape(), std::vector<double>(p.tensor.values().begin(),
                                                                          p.tensor.values().end()));
  out.buffers_ = buffers_;
  return out;
}

void ParameterStore::save(const std::filesystem::path& prefix) const {
  std::ofstream idx(prefix.string() + ".index");
  std::ofstream bin(prefix.string() + ".bin", std::ios::binary);
  if (!idx || !bin) throw RuntimeFailure("cannot write checkpoint at " + prefix.string());
  idx << "# musefm checkpoint v1: kind name rank dims... offset count\n";
  std::uint64_t offset = 0;
  auto write = [&](const char* kind, const std::string& name, const Shape& shape, std::span<const double> v) {
    idx << kind << ' ' << name << ' ' << shape.size();
    for (auto d : shape) idx << ' ' << d;
    idx << ' ' << offset << ' ' << v.size() << '\n';
    bin.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    offset += v.size() * sizeof(double);
  };
  for (const auto& p : params_) write("param", p.name, p.tensor.shape(), p.tensor.values());
  for (const auto& [name, v] : buffers_) write("buffer", name, {v.size()}, v);
  if (!idx || !bin) throw RuntimeFailure("short write on checkpoint " + prefix.string());
}

void ParameterStore::load(const std::filesystem::path& prefix) {
  std::ifstream idx(prefix.string() + ".index");
  std::ifstream bin(prefix.string() + ".bin", std::ios::binary);
  if (!idx) throw RuntimeFailure("missing checkpoint index " + prefix.string() + ".index");
  if (!bin) throw RuntimeFailure("missing checkpoint data " + prefix.string() + ".bin");
  std::string line;
  std::size_t loaded = 0;
  while (std::getline(idx, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string kind, name;
    std::size_t rank = 0;
    ls >> kind >> name >> rank;
    Shape shape(rank);
    for (auto& d : shape) ls >> d;
    std::uint64_t offset = 0, count = 0;
    ls >> offset >> count;
    if (!ls) throw RuntimeFailure("malformed checkpoint index line: " + line);
    std::vector<double> v(count);
    bin.seekg(static_cast<std::streamoff>(offset));
    bin.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(count * sizeof(double)));
    if (!bin) throw RuntimeFailure("checkpoint data truncated at " + name);
    if (kind == "buffer") {
      buffers_[name] = std::move(v);
      continue;
    }
    auto& p = get(name);
    if (p.tensor.shape() != shape)
      throw ValidationError("checkpoint shape mismatch for " + name + ": " + shape_str(shape) + " vs " +
                            shape_str(p.tensor.shape()));
    p.tensor.mutable_values() = std::move(v);
    ++loaded;
  }
  if (loaded != params_.size())
    throw ValidationError("checkpoint holds " + std::to_string(loaded) + " parameters, model expects " +
                          std::to_string(params_.size()));
}

}  // namespace musefm::ad
