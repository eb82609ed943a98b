#include "latsa/parameters.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace latsa {

Parameter& ParameterStore::add(const std::string& name, std::vector<std::size_t> shape, std::vector<double> value) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name " + name);
  index_.emplace(name, params_.size());
  params_.push_back(std::make_unique<Parameter>(name, std::move(shape), std::move(value)));
  return *params_.back();
}

Parameter& ParameterStore::add_glorot(const std::string& name, std::vector<std::size_t> shape, Rng& rng) {
  const std::size_t fan_out = shape.back();
  const std::size_t fan_in = shape.size() >= 2 ? shape[shape.size() - 2] : 1;
  const double r = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> v(n);
  for (double& x : v) x = (2.0 * rng.uniform() - 1.0) * r;
  return add(name, std::move(shape), std::move(v));
}

Parameter& ParameterStore::add_constant(const std::string& name, std::vector<std::size_t> shape, double c) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return add(name, std::move(shape), std::vector<double>(n, c));
}

Parameter& ParameterStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
  return *params_[it->second];
}

const Parameter& ParameterStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
  return *params_[it->second];
}

std::size_t ParameterStore::total_values() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->numel();
  return n;
}

void ParameterStore::copy_values_from(const ParameterStore& other) {
  for (const auto& p : params_) {
    if (!other.contains(p->name())) continue;
    const Parameter& src = other.at(p->name());
    if (src.shape() == p->shape()) p->value() = src.value();
  }
}

std::map<std::string, Tensor> gradient_map(const Gradients& g, const ParameterStore& store) {
  std::map<std::string, Tensor> out;
  for (std::size_t i = 0; i < store.size(); ++i) {
    const Parameter& p = store[i];
    const auto* grad = g.find(p);
    out.emplace(p.name(), Tensor(p.shape(), grad ? *grad : std::vector<double>(p.numel(), 0.0)));
  }
  return out;
}

namespace {

constexpr char kMagic[8] = {'L', 'A', 'T', 'S', 'A', 'C', 'K', '1'};

void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw std::runtime_error("checkpoint truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParameterStore& store, const nlohmann::json& manifest) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path);
  os.write(kMagic, sizeof kMagic);
  write_u64(os, store.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    const Parameter& p = store[i];
    write_u64(os, p.name().size());
    os.write(p.name().data(), static_cast<std::streamsize>(p.name().size()));
    write_u64(os, p.shape().size());
    for (auto d : p.shape()) write_u64(os, d);
    for (double v : p.value()) write_u64(os, std::bit_cast<std::uint64_t>(v));
  }
  if (!os) throw std::runtime_error("failed writing checkpoint " + path);

  nlohmann::json full = manifest;
  full["parameters"] = nlohmann::json::array();
  for (std::size_t i = 0; i < store.size(); ++i)
    full["parameters"].push_back({{"name", store[i].name()}, {"shape", store[i].shape()}});
  std::ofstream ms(path + ".json");
  if (!ms) throw std::runtime_error("cannot write manifest " + path + ".json");
  ms << full.dump(2) << '\n';
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path);
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error(path + " is not a checkpoint archive");
  Checkpoint ck;
  const std::uint64_t count = read_u64(is);
  for (std::uint64_t e = 0; e < count; ++e) {
    const std::uint64_t len = read_u64(is);
    std::string name(len, '\0');
    if (!is.read(name.data(), static_cast<std::streamsize>(len))) throw std::runtime_error("checkpoint truncated");
    const std::uint64_t rank = read_u64(is);
    std::vector<std::size_t> shape;
    std::size_t n = 1;
    for (std::uint64_t r = 0; r < rank; ++r) {
      shape.push_back(read_u64(is));
      n *= shape.back();
    }
    std::vector<double> values(n);
    for (double& v : values) v = std::bit_cast<double>(read_u64(is));
    ck.params.emplace_back(std::move(name), std::move(shape), std::move(values));
  }
  std::ifstream ms(path + ".json");
  if (ms) ck.manifest = nlohmann::json::parse(ms);
  return ck;
}

nlohmann::json load_checkpoint(const std::string& path, ParameterStore& store) {
  Checkpoint ck = read_checkpoint(path);
  if (ck.params.size() != store.size())
    throw std::runtime_error("checkpoint " + path + " has " + std::to_string(ck.params.size()) +
                             " parameters, model expects " + std::to_string(store.size()));
  for (const Parameter& src : ck.params) {
    Parameter& dst = store.at(src.name());
    if (dst.shape() != src.shape()) throw std::runtime_error("checkpoint shape mismatch for " + src.name());
    dst.value() = src.value();
  }
  return ck.manifest;
}

void Adam::step(ParameterStore& store, const Gradients& grads, double lr) {
  ++t_;
  double clip = 1.0;
  if (cfg_.clip_norm > 0.0) {
    double sq = 0.0;
    for (std::size_t i = 0; i < store.size(); ++i)
      if (const auto* g = grads.find(store[i]))
        for (double v : *g) sq += v * v;
    const double norm = std::sqrt(sq);
    if (norm > cfg_.clip_norm) clip = cfg_.clip_norm / norm;
  }
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < store.size(); ++i) {
    Parameter& p = store[i];
    auto& [m, v] = moments_[&p];
    if (m.empty()) {
      m.assign(p.numel(), 0.0);
      v.assign(p.numel(), 0.0);
    }
    const auto* g = grads.find(p);
    double* x = p.value().data();
    double* mk = m.data();
    double* vk = v.data();
    const std::size_t n = p.numel();
    const double b1 = cfg_.beta1, b2 = cfg_.beta2, eps = cfg_.epsilon;
    // Two branch-free loops so the compiler can vectorize each.
    if (g) {
      const double* gv = g->data();
      for (std::size_t k = 0; k < n; ++k) {
        const double gk = gv[k] * clip;
        mk[k] = b1 * mk[k] + (1.0 - b1) * gk;
        vk[k] = b2 * vk[k] + (1.0 - b2) * gk * gk;
        x[k] -= lr * (mk[k] / bc1) / (std::sqrt(vk[k] / bc2) + eps);
      }
    } else {
      for (std::size_t k = 0; k < n; ++k) {
        mk[k] = b1 * mk[k];
        vk[k] = b2 * vk[k];
        x[k] -= lr * (mk[k] / bc1) / (std::sqrt(vk[k] / bc2) + eps);
      }
    }
  }
}

}  // namespace latsa
