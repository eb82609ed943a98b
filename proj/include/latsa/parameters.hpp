#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "latsa/rng.hpp"
#include "latsa/tensor.hpp"

namespace latsa {

/// Owns every Parameter of a model. Names are unique; iteration follows
/// insertion order. Parameter addresses are stable for the store's lifetime.
class ParameterStore {
public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) = default;
  ParameterStore& operator=(ParameterStore&&) = default;

  Parameter& add(const std::string& name, std::vector<std::size_t> shape, std::vector<double> value);
  /// Uniform(-r, r) with r = sqrt(6 / (fan_in + fan_out)) over the last two dims.
  Parameter& add_glorot(const std::string& name, std::vector<std::size_t> shape, Rng& rng);
  Parameter& add_constant(const std::string& name, std::vector<std::size_t> shape, double v);

  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return params_.size(); }
  std::size_t total_values() const;
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }

  /// Copies values from `other` for every parameter with the same name and shape.
  void copy_values_from(const ParameterStore& other);

private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::map<std::string, std::size_t> index_;
};

/// Gradient map keyed by parameter name, with zeros for parameters that did
/// not contribute to the loss.
std::map<std::string, Tensor> gradient_map(const Gradients& g, const ParameterStore& store);

/// Writes `path` (binary archive) and `path + ".json"` (manifest). Archive
/// layout, all integers little-endian u64: magic "LATSACK1", entry count, then
/// per entry: name length, name bytes, rank, dims, raw little-endian doubles.
void save_checkpoint(const std::string& path, const ParameterStore& store, const nlohmann::json& manifest);

struct Checkpoint {
  nlohmann::json manifest;
  std::vector<Parameter> params;
};

Checkpoint read_checkpoint(const std::string& path);

/// Loads values into an existing store; names and shapes must match exactly.
nlohmann::json load_checkpoint(const std::string& path, ParameterStore& store);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-9;
  double clip_norm = 5.0;  // global gradient-norm clip; <= 0 disables
};

class Adam {
public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  /// One update with learning rate `lr`. Parameters without gradients still
  /// see their moments decay.
  void step(ParameterStore& store, const Gradients& grads, double lr);
  long long steps() const { return t_; }

private:
  AdamConfig cfg_;
  long long t_ = 0;
  std::map<const Parameter*, std::pair<std::vector<double>, std::vector<double>>> moments_;
};

}  // namespace latsa
