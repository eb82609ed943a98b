#pragma once

// Plain-loop Transformer encoder for sequences, written against raw parameter
// values. Used to check the lattice encoder's reduction to the sequential case.

#include <cmath>
#include <string>
#include <vector>

#include "latsa/encoder.hpp"
#include "latsa/parameters.hpp"

namespace reference {

using Matrix = std::vector<std::vector<double>>;

inline Matrix param_matrix(const latsa::ParameterStore& store, const std::string& name) {
  const auto& p = store.at(name);
  const std::size_t r = p.shape().size() == 1 ? 1 : p.shape()[0];
  const std::size_t c = p.numel() / r;
  Matrix m(r, std::vector<double>(c));
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) m[i][j] = p.value()[i * c + j];
  return m;
}

inline Matrix mult(const Matrix& a, const Matrix& b) {
  Matrix c(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b[0].size(); ++j)
      for (std::size_t k = 0; k < b.size(); ++k) c[i][j] += a[i][k] * b[k][j];
  return c;
}

inline Matrix norm(const Matrix& x, const std::vector<double>& g, const std::vector<double>& b) {
  Matrix y = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double n = static_cast<double>(x[i].size());
    double mean = 0, var = 0;
    for (double v : x[i]) mean += v;
    mean /= n;
    for (double v : x[i]) var += (v - mean) * (v - mean);
    var /= n;
    for (std::size_t j = 0; j < x[i].size(); ++j) y[i][j] = g[j] * (x[i][j] - mean) / std::sqrt(var + 1e-6) + b[j];
  }
  return y;
}

/// Encodes <s> ids... </s> (ids already include the sentinels) with positions
/// 0..n-1. With `triangular`, forward heads see keys at or after the query and
/// backward heads keys at or before it; otherwise every head sees everything.
inline Matrix encode_sequence(const latsa::EncoderConfig& cfg, const latsa::ParameterStore& store,
                              const std::vector<std::size_t>& ids, bool triangular = true,
                              const std::string& prefix = "enc") {
  const std::size_t n = ids.size(), d = cfg.d_model, dh = cfg.head_dim();
  const Matrix tok = param_matrix(store, prefix + ".tok_emb"), pos = param_matrix(store, prefix + ".pos_emb");
  Matrix x(n, std::vector<double>(d));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) x[i][j] = tok[ids[i]][j] + pos[i][j];

  for (std::size_t layer = 0; layer < cfg.n_layers; ++layer) {
    const std::string lp = prefix + ".layer" + std::to_string(layer);
    Matrix heads(n, std::vector<double>(d, 0.0));
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
      const Matrix wqkv = param_matrix(store, lp + ".Wqkv");
      const auto block = [&](std::size_t offset) {
        Matrix w(d, std::vector<double>(dh));
        for (std::size_t r = 0; r < d; ++r)
          for (std::size_t c = 0; c < dh; ++c) w[r][c] = wqkv[r][offset + h * dh + c];
        return w;
      };
      const Matrix q = mult(x, block(0));
      const Matrix k = mult(x, block(d));
      const Matrix v = mult(x, block(2 * d));
      const bool forward = h < cfg.n_heads / 2;
      const auto hidden = [&](std::size_t i, std::size_t j) { return triangular && (forward ? j < i : j > i); };
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> w(n, 0.0);
        double mx = -1e300, total = 0;
        for (std::size_t j = 0; j < n; ++j) {
          if (hidden(i, j)) continue;
          double s = 0;
          for (std::size_t c = 0; c < dh; ++c) s += q[i][c] * k[j][c];
          w[j] = s / std::sqrt(static_cast<double>(dh));
          mx = std::max(mx, w[j]);
        }
        for (std::size_t j = 0; j < n; ++j) {
          if (hidden(i, j)) continue;
          w[j] = std::exp(w[j] - mx);
          total += w[j];
        }
        for (std::size_t j = 0; j < n; ++j) {
          if (hidden(i, j)) continue;
          for (std::size_t c = 0; c < dh; ++c) heads[i][h * dh + c] += w[j] / total * v[j][c];
        }
      }
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) heads[i][j] += x[i][j];
    const Matrix l = norm(heads, param_matrix(store, lp + ".ln1.gain")[0], param_matrix(store, lp + ".ln1.bias")[0]);
    Matrix hid = mult(l, param_matrix(store, lp + ".ff.W1"));
    const auto b1 = param_matrix(store, lp + ".ff.b1")[0];
    for (auto& row : hid)
      for (std::size_t j = 0; j < row.size(); ++j) row[j] = std::max(0.0, row[j] + b1[j]);
    Matrix ff = mult(hid, param_matrix(store, lp + ".ff.W2"));
    const auto b2 = param_matrix(store, lp + ".ff.b2")[0];
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) ff[i][j] += b2[j] + l[i][j];
    x = norm(ff, param_matrix(store, lp + ".ln2.gain")[0], param_matrix(store, lp + ".ln2.bias")[0]);
  }
  return x;
}

}  // namespace reference
