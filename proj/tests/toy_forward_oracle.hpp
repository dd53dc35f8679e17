#pragma once

// Independent straight-line reimplementation of the toy transformer forward
// pass, computed directly from the exported weight views. Used as the golden
// reference for the model's own forward; deliberately shares no code with it.

#include <cmath>
#include <span>
#include <vector>

#include "fairpipe/toy_lm.hpp"

namespace oracle {

struct ForwardOut {
  std::vector<std::vector<double>> logits;  // per position
  std::vector<std::vector<double>> hidden;  // final-layer hidden per position
};

inline ForwardOut toy_forward(const fairpipe::ToyLm& model, std::span<const int> tokens) {
  const fairpipe::ToyLm::WeightViews w = model.weights();
  const int d = model.hidden_width();
  const int f = w.mlp_width;
  const int V = model.vocab_size();
  const std::size_t T = tokens.size();

  auto rms = [&](const std::vector<double>& x, std::span<const double> g) {
    double ms = 0.0;
    for (int i = 0; i < d; ++i) ms += x[std::size_t(i)] * x[std::size_t(i)];
    ms = ms / double(d) + 1e-8;
    double inv = 1.0 / std::sqrt(ms);
    std::vector<double> y(static_cast<std::size_t>(d));
    for (int i = 0; i < d; ++i) y[std::size_t(i)] = g[std::size_t(i)] * x[std::size_t(i)] * inv;
    return y;
  };
  auto matvec = [&](std::span<const double> m, const std::vector<double>& x, int rows,
                    int cols) {
    std::vector<double> y(static_cast<std::size_t>(rows), 0.0);
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) {
        y[std::size_t(r)] += m[std::size_t(r) * std::size_t(cols) + std::size_t(c)] *
                             x[std::size_t(c)];
      }
    }
    return y;
  };

  std::vector<std::vector<double>> x(T, std::vector<double>(static_cast<std::size_t>(d)));
  for (std::size_t t = 0; t < T; ++t) {
    for (int i = 0; i < d; ++i) {
      x[t][std::size_t(i)] =
          w.tok_emb[std::size_t(tokens[t]) * std::size_t(d) + std::size_t(i)] +
          w.pos_emb[t * std::size_t(d) + std::size_t(i)];
    }
  }

  for (const auto& layer : w.layers) {
    std::vector<std::vector<double>> q(T), k(T), v(T);
    for (std::size_t t = 0; t < T; ++t) {
      std::vector<double> a = rms(x[t], layer.rms1);
      q[t] = matvec(layer.wq, a, d, d);
      k[t] = matvec(layer.wk, a, d, d);
      v[t] = matvec(layer.wv, a, d, d);
    }
    for (std::size_t t = 0; t < T; ++t) {
      std::vector<double> scores(t + 1);
      for (std::size_t s = 0; s <= t; ++s) {
        double dot = 0.0;
        for (int i = 0; i < d; ++i) dot += q[t][std::size_t(i)] * k[s][std::size_t(i)];
        scores[s] = dot / std::sqrt(double(d));
      }
      double mx = scores[0];
      for (double sc : scores) mx = std::max(mx, sc);
      double z = 0.0;
      for (double& sc : scores) {
        sc = std::exp(sc - mx);
        z += sc;
      }
      std::vector<double> u(std::size_t(d), 0.0);
      for (std::size_t s = 0; s <= t; ++s) {
        for (int i = 0; i < d; ++i) u[std::size_t(i)] += (scores[s] / z) * v[s][std::size_t(i)];
      }
      std::vector<double> o = matvec(layer.wo, u, d, d);
      for (int i = 0; i < d; ++i) x[t][std::size_t(i)] += o[std::size_t(i)];
    }
    for (std::size_t t = 0; t < T; ++t) {
      std::vector<double> b = rms(x[t], layer.rms2);
      std::vector<double> pre = matvec(layer.w1, b, f, d);
      for (int i = 0; i < f; ++i) pre[std::size_t(i)] += layer.b1[std::size_t(i)];
      std::vector<double> act(static_cast<std::size_t>(f));
      for (int i = 0; i < f; ++i) {
        double p = pre[std::size_t(i)];
        act[std::size_t(i)] = p / (1.0 + std::exp(-p));
      }
      std::vector<double> m = matvec(layer.w2, act, d, f);
      for (int i = 0; i < d; ++i) x[t][std::size_t(i)] += m[std::size_t(i)] + layer.b2[std::size_t(i)];
    }
  }

  ForwardOut out;
  out.hidden.resize(T);
  out.logits.resize(T);
  for (std::size_t t = 0; t < T; ++t) {
    out.hidden[t] = rms(x[t], w.rms_final);
    std::vector<double> logits(static_cast<std::size_t>(V));
    for (int tok = 0; tok < V; ++tok) {
      double acc = w.vocab_bias[std::size_t(tok)];
      for (int i = 0; i < d; ++i) {
        acc += w.unembed[std::size_t(tok) * std::size_t(d) + std::size_t(i)] *
               out.hidden[t][std::size_t(i)];
      }
      logits[std::size_t(tok)] = acc;
    }
    out.logits[t] = std::move(logits);
  }
  return out;
}

}  // namespace oracle
