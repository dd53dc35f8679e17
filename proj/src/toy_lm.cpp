#include "fairpipe/toy_lm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <stdexcept>

#include "json.hpp"

namespace fairpipe {
namespace {

constexpr double kRmsEps = 1e-8;
constexpr std::size_t kMaxParams = 100000;
constexpr const char* kBlockNames[4] = {"q_proj", "k_proj", "v_proj", "o_proj"};

double silu(double x) {
  double s = 1.0 / (1.0 + std::exp(-x));
  return x * s;
}

double silu_grad(double x) {
  double s = 1.0 / (1.0 + std::exp(-x));
  return s * (1.0 + x * (1.0 - s));
}

}  // namespace

std::vector<std::string> builtin_word_list() {
  return {
      // question scaffolding
      "who", "what", "which", "when", "where", "why", "how", "are", "is", "was",
      "were", "do", "does", "did", "have", "has", "had", "will", "can", "the",
      "a", "an", "of", "in", "to", "and", "or", "not", "it", "that", "this",
      "they", "them", "their", "people", "person", "one", "many", "much",
      "more", "most", "some", "all", "only", "as", "answer", "yes", "no",
      // gendered answer pair used by the probe corpora
      "men", "women",
      // socioeconomic vocabulary
      "poor", "rich", "wealthy", "needy", "poverty", "wealth", "money",
      "income", "salary", "credit", "debt", "loan", "bank", "savings",
      "budget", "employed", "unemployed", "employment", "job", "work",
      "earns", "earn", "pay", "paid", "risk", "good", "bad", "high", "low",
      "status", "class", "usd", "50k", "based", "on", "description",
      "predict", "whether", "given",
      // tabular feature words
      "age", "sex", "male", "female", "workclass", "private", "education",
      "occupation", "hours", "per", "week", "value", "unknown", "x", "y",
      // neutral corpus vocabulary
      "color", "sky", "grass", "water", "sun", "moon", "blue", "green",
      "red", "white", "apple", "fruit", "cat", "dog", "animal", "paris",
      "france", "capital", "city", "country", "day", "night", "year",
      "month", "rain", "cold", "hot", "weather", "two", "three", "four",
      "plus", "equals", "number", "big", "small", "old", "new", "long",
      "short", "first", "last", "north", "south", "east", "west", "river",
      "mountain", "ocean", "tree", "bird", "fish", "book", "word", "name",
      // digits and punctuation
      "0", "1", "2", "3", "4", "5", "6", "7", "8", "9", ".", ",", "?", "!",
  };
}

struct ToyLm::Impl {
  ToyLMConfig config;
  std::shared_ptr<const Tokenizer> tokenizer;
  int V = 0, C = 0, d = 0, f = 0, L = 0;

  struct LayerOffsets {
    std::size_t rms1, wq, wk, wv, wo, rms2, w1, b1, w2, b2;
  };
  std::size_t off_tok = 0, off_pos = 0, off_rmsf = 0, off_unemb = 0, off_vbias = 0,
              off_planted = 0;
  std::vector<LayerOffsets> layer_off;
  std::size_t base_count = 0;

  std::vector<double> base, base_grad;

  // planted bias runtime
  bool has_planted = false;
  std::vector<int> pattern_tokens;
  int favored_id = -1;
  int counterpart_id = -1;

  bool is_frozen = false;

  // adapters
  bool adapters_attached = false;
  AdapterConfig adapter_cfg;
  int adapter_rank = 0;
  std::vector<std::array<int, 4>> slot_of;  // per layer, per block -> slot or -1
  struct Slot {
    std::size_t off_a, off_b;  // A: r x d, B: d x r
  };
  std::vector<Slot> slots;
  std::vector<double> adapter, adapter_grad;

  bool train_mode = false;
  std::mt19937_64 dropout_rng{0};

  // ---- layout ----
  void compute_layout() {
    std::size_t off = 0;
    auto alloc = [&off](std::size_t n) {
      std::size_t at = off;
      off += n;
      return at;
    };
    std::size_t dd = std::size_t(d);
    off_tok = alloc(std::size_t(V) * dd);
    off_pos = alloc(std::size_t(C) * dd);
    layer_off.clear();
    for (int l = 0; l < L; ++l) {
      LayerOffsets lo;
      lo.rms1 = alloc(dd);
      lo.wq = alloc(dd * dd);
      lo.wk = alloc(dd * dd);
      lo.wv = alloc(dd * dd);
      lo.wo = alloc(dd * dd);
      lo.rms2 = alloc(dd);
      lo.w1 = alloc(std::size_t(f) * dd);
      lo.b1 = alloc(std::size_t(f));
      lo.w2 = alloc(dd * std::size_t(f));
      lo.b2 = alloc(dd);
      layer_off.push_back(lo);
    }
    off_rmsf = alloc(dd);
    off_unemb = alloc(std::size_t(V) * dd);
    off_vbias = alloc(std::size_t(V));
    if (has_planted) off_planted = alloc(1);
    base_count = off;
  }

  // ---- forward ----
  struct LayerCache {
    std::vector<double> x_in, a, q, k, v, att, u, x_mid, bvec, pre, act;
    std::vector<double> inv_r1, inv_r2;
    std::array<std::vector<double>, 4> ad_z1;    // per block: T x r
    std::array<std::vector<double>, 4> ad_mask;  // per block: T x d (dropout scale)
  };
  struct Cache {
    int T = 0;
    std::vector<int> toks;
    std::vector<LayerCache> layers;
    std::vector<double> x_final, h;
    std::vector<double> inv_rf;
    std::vector<char> match;
  };

  void rmsnorm(const double* x, const double* g, double* y, double* inv_r) const {
    double ss = 0.0;
    for (int i = 0; i < d; ++i) ss += x[i] * x[i];
    double r = 1.0 / std::sqrt(ss / double(d) + kRmsEps);
    *inv_r = r;
    for (int i = 0; i < d; ++i) y[i] = g[i] * x[i] * r;
  }

  // dx += backward of y = g * x * inv_r; accumulates dg.
  void rmsnorm_backward(const double* dy, const double* x, const double* g, double inv_r,
                        double* dx, double* dg) const {
    double s = 0.0;
    for (int i = 0; i < d; ++i) s += dy[i] * g[i] * x[i];
    double k = s * inv_r * inv_r * inv_r / double(d);
    for (int i = 0; i < d; ++i) {
      dx[i] += dy[i] * g[i] * inv_r - x[i] * k;
      dg[i] += dy[i] * x[i] * inv_r;
    }
  }

  // out_t = W in_t (+ adapter branch). W is d x d row-major. `layer`/`block`
  // select the adapter slot; cache may be null for eval-only calls.
  void project(int layer, int block, std::size_t w_off, const std::vector<double>& in,
               std::vector<double>* out, int T, LayerCache* lc) const {
    const double* w = base.data() + w_off;
    out->assign(std::size_t(T) * std::size_t(d), 0.0);
    for (int t = 0; t < T; ++t) {
      const double* it = in.data() + std::size_t(t) * d;
      double* ot = out->data() + std::size_t(t) * d;
      for (int i = 0; i < d; ++i) {
        const double* wrow = w + std::size_t(i) * d;
        double acc = 0.0;
        for (int j = 0; j < d; ++j) acc += wrow[j] * it[j];
        ot[i] = acc;
      }
    }
    int slot = adapters_attached ? slot_of[layer][block] : -1;
    if (slot < 0) return;
    const int r = adapter_rank;
    const double scale = adapter_cfg.scaling / double(r);
    const double* A = adapter.data() + slots[slot].off_a;  // r x d
    const double* B = adapter.data() + slots[slot].off_b;  // d x r
    std::vector<double>* z1 = lc ? &lc->ad_z1[block] : nullptr;
    if (z1) z1->assign(std::size_t(T) * r, 0.0);
    std::vector<double>* mask = lc ? &lc->ad_mask[block] : nullptr;
    const bool drop = train_mode && adapter_cfg.dropout > 0.0;
    if (mask && drop) mask->assign(std::size_t(T) * d, 0.0);
    std::vector<double> local_z1(r);
    std::vector<double> dropped(d);
    for (int t = 0; t < T; ++t) {
      const double* it = in.data() + std::size_t(t) * d;
      const double* use = it;
      if (drop) {
        double keep = 1.0 - adapter_cfg.dropout;
        for (int j = 0; j < d; ++j) {
          double u = std::uniform_real_distribution<double>(0.0, 1.0)(
              const_cast<Impl*>(this)->dropout_rng);
          double m = u < adapter_cfg.dropout ? 0.0 : 1.0 / keep;
          dropped[j] = it[j] * m;
          if (mask) (*mask)[std::size_t(t) * d + j] = m;
        }
        use = dropped.data();
      }
      for (int a = 0; a < r; ++a) {
        const double* arow = A + std::size_t(a) * d;
        double acc = 0.0;
        for (int j = 0; j < d; ++j) acc += arow[j] * use[j];
        local_z1[a] = acc;
        if (z1) (*z1)[std::size_t(t) * r + a] = acc;
      }
      double* ot = out->data() + std::size_t(t) * d;
      for (int i = 0; i < d; ++i) {
        const double* brow = B + std::size_t(i) * r;
        double acc = 0.0;
        for (int a = 0; a < r; ++a) acc += brow[a] * local_z1[a];
        ot[i] += scale * acc;
      }
    }
  }

  // din += W^T dout; accumulates weight/adapter gradients.
  void project_backward(int layer, int block, std::size_t w_off,
                        const std::vector<double>& in, const std::vector<double>& dout,
                        std::vector<double>* din, int T, const LayerCache& lc) {
    const double* w = base.data() + w_off;
    double* dw = base_grad.data() + w_off;
    for (int t = 0; t < T; ++t) {
      const double* it = in.data() + std::size_t(t) * d;
      const double* dot_ = dout.data() + std::size_t(t) * d;
      double* dit = din->data() + std::size_t(t) * d;
      for (int i = 0; i < d; ++i) {
        const double g = dot_[i];
        const double* wrow = w + std::size_t(i) * d;
        double* dwrow = dw + std::size_t(i) * d;
        for (int j = 0; j < d; ++j) {
          dit[j] += wrow[j] * g;
          dwrow[j] += g * it[j];
        }
      }
    }
    int slot = adapters_attached ? slot_of[layer][block] : -1;
    if (slot < 0) return;
    const int r = adapter_rank;
    const double scale = adapter_cfg.scaling / double(r);
    const double* A = adapter.data() + slots[slot].off_a;
    const double* B = adapter.data() + slots[slot].off_b;
    double* dA = adapter_grad.data() + slots[slot].off_a;
    double* dB = adapter_grad.data() + slots[slot].off_b;
    const std::vector<double>& z1 = lc.ad_z1[block];
    const std::vector<double>& mask = lc.ad_mask[block];
    std::vector<double> dz1(r);
    for (int t = 0; t < T; ++t) {
      const double* dot_ = dout.data() + std::size_t(t) * d;
      const double* z1t = z1.data() + std::size_t(t) * r;
      const double* it = in.data() + std::size_t(t) * d;
      double* dit = din->data() + std::size_t(t) * d;
      // dz2 = scale * dout
      std::fill(dz1.begin(), dz1.end(), 0.0);
      for (int i = 0; i < d; ++i) {
        double dz2 = scale * dot_[i];
        const double* brow = B + std::size_t(i) * r;
        double* dbrow = dB + std::size_t(i) * r;
        for (int a = 0; a < r; ++a) {
          dbrow[a] += dz2 * z1t[a];
          dz1[a] += brow[a] * dz2;
        }
      }
      const double* mt = mask.empty() ? nullptr : mask.data() + std::size_t(t) * d;
      for (int a = 0; a < r; ++a) {
        const double* arow = A + std::size_t(a) * d;
        double* darow = dA + std::size_t(a) * d;
        for (int j = 0; j < d; ++j) {
          double inj = mt ? it[j] * mt[j] : it[j];
          darow[j] += dz1[a] * inj;
          dit[j] += (mt ? arow[j] * mt[j] : arow[j]) * dz1[a];
        }
      }
    }
  }

  void compute_match(std::span<const int> toks, std::vector<char>* match) const {
    const int T = int(toks.size());
    match->assign(std::size_t(T), 0);
    if (!has_planted || pattern_tokens.empty()) return;
    const int m = int(pattern_tokens.size());
    int earliest_end = -1;
    for (int start = 0; start + m <= T; ++start) {
      bool ok = true;
      for (int i = 0; i < m; ++i) {
        if (toks[std::size_t(start + i)] != pattern_tokens[std::size_t(i)]) {
          ok = false;
          break;
        }
      }
      if (ok) {
        earliest_end = start + m - 1;
        break;
      }
    }
    if (earliest_end < 0) return;
    for (int t = earliest_end; t < T; ++t) (*match)[std::size_t(t)] = 1;
  }

  Matrix forward(std::span<const int> toks, Cache* cache) const {
    const int T = int(toks.size());
    if (T == 0) throw std::invalid_argument("empty token sequence");
    if (T > C) throw std::runtime_error("sequence length exceeds the context size");
    for (int id : toks) {
      if (id < 0 || id >= V) throw std::invalid_argument("token id out of range");
    }
    const std::size_t td = std::size_t(T) * std::size_t(d);
    std::vector<double> x(td);
    for (int t = 0; t < T; ++t) {
      const double* e = base.data() + off_tok + std::size_t(toks[std::size_t(t)]) * d;
      const double* p = base.data() + off_pos + std::size_t(t) * d;
      double* xt = x.data() + std::size_t(t) * d;
      for (int i = 0; i < d; ++i) xt[i] = e[i] + p[i];
    }
    if (cache) {
      cache->T = T;
      cache->toks.assign(toks.begin(), toks.end());
      cache->layers.resize(std::size_t(L));
    }
    const double inv_sqrt_d = 1.0 / std::sqrt(double(d));
    std::vector<double> a(td), q(td), k(td), v(td), u(td), bvec(td);
    std::vector<double> att(std::size_t(T) * std::size_t(T), 0.0);
    std::vector<double> inv_r1(static_cast<std::size_t>(T));
    std::vector<double> inv_r2(static_cast<std::size_t>(T));
    const std::size_t tf = std::size_t(T) * std::size_t(f);
    std::vector<double> pre(tf), act(tf);
    std::vector<double> proj_out;
    for (int l = 0; l < L; ++l) {
      const LayerOffsets& lo = layer_off[std::size_t(l)];
      LayerCache* lc = cache ? &cache->layers[std::size_t(l)] : nullptr;
      if (lc) lc->x_in = x;
      const double* g1 = base.data() + lo.rms1;
      for (int t = 0; t < T; ++t) {
        rmsnorm(x.data() + std::size_t(t) * d, g1, a.data() + std::size_t(t) * d,
                &inv_r1[std::size_t(t)]);
      }
      project(l, 0, lo.wq, a, &q, T, lc);
      project(l, 1, lo.wk, a, &k, T, lc);
      // q,k,v share the adapter input `a`; only z1 caches differ per block.
      {
        // v uses block index 2
        project(l, 2, lo.wv, a, &v, T, lc);
      }
      for (int t = 0; t < T; ++t) {
        double* att_row = att.data() + std::size_t(t) * T;
        double max = -1e300;
        for (int s = 0; s <= t; ++s) {
          const double* qt = q.data() + std::size_t(t) * d;
          const double* ks = k.data() + std::size_t(s) * d;
          double score = 0.0;
          for (int i = 0; i < d; ++i) score += qt[i] * ks[i];
          score *= inv_sqrt_d;
          att_row[s] = score;
          max = std::max(max, score);
        }
        double sum = 0.0;
        for (int s = 0; s <= t; ++s) {
          att_row[s] = std::exp(att_row[s] - max);
          sum += att_row[s];
        }
        for (int s = 0; s <= t; ++s) att_row[s] /= sum;
        double* ut = u.data() + std::size_t(t) * d;
        std::fill(ut, ut + d, 0.0);
        for (int s = 0; s <= t; ++s) {
          const double* vs = v.data() + std::size_t(s) * d;
          const double w_att = att_row[s];
          for (int i = 0; i < d; ++i) ut[i] += w_att * vs[i];
        }
      }
      project(l, 3, lo.wo, u, &proj_out, T, lc);
      for (std::size_t i = 0; i < td; ++i) x[i] += proj_out[i];
      if (lc) {
        lc->a = a;
        lc->q = q;
        lc->k = k;
        lc->v = v;
        lc->att = att;
        lc->u = u;
        lc->inv_r1 = inv_r1;
        lc->x_mid = x;
      }
      const double* g2 = base.data() + lo.rms2;
      for (int t = 0; t < T; ++t) {
        rmsnorm(x.data() + std::size_t(t) * d, g2, bvec.data() + std::size_t(t) * d,
                &inv_r2[std::size_t(t)]);
      }
      const double* w1 = base.data() + lo.w1;
      const double* b1 = base.data() + lo.b1;
      const double* w2 = base.data() + lo.w2;
      const double* b2 = base.data() + lo.b2;
      for (int t = 0; t < T; ++t) {
        const double* bt = bvec.data() + std::size_t(t) * d;
        double* pt = pre.data() + std::size_t(t) * f;
        double* at = act.data() + std::size_t(t) * f;
        for (int i = 0; i < f; ++i) {
          const double* row = w1 + std::size_t(i) * d;
          double acc = b1[i];
          for (int j = 0; j < d; ++j) acc += row[j] * bt[j];
          pt[i] = acc;
          at[i] = silu(acc);
        }
        double* xt = x.data() + std::size_t(t) * d;
        for (int i = 0; i < d; ++i) {
          const double* row = w2 + std::size_t(i) * f;
          double acc = b2[i];
          for (int j = 0; j < f; ++j) acc += row[j] * at[j];
          xt[i] += acc;
        }
      }
      if (lc) {
        lc->bvec = bvec;
        lc->inv_r2 = inv_r2;
        lc->pre = pre;
        lc->act = act;
      }
    }
    std::vector<double> h(td);
    std::vector<double> inv_rf(static_cast<std::size_t>(T), 0.0);
    const double* gf = base.data() + off_rmsf;
    for (int t = 0; t < T; ++t) {
      rmsnorm(x.data() + std::size_t(t) * d, gf, h.data() + std::size_t(t) * d,
              &inv_rf[std::size_t(t)]);
    }
    std::vector<char> match;
    compute_match(toks, &match);
    Matrix logits(static_cast<std::size_t>(T), static_cast<std::size_t>(V));
    const double* unemb = base.data() + off_unemb;
    const double* vb = base.data() + off_vbias;
    const double planted = has_planted ? base[off_planted] : 0.0;
    for (int t = 0; t < T; ++t) {
      const double* ht = h.data() + std::size_t(t) * d;
      auto row = logits.row(std::size_t(t));
      for (int tok = 0; tok < V; ++tok) {
        const double* urow = unemb + std::size_t(tok) * d;
        double acc = vb[tok];
        for (int i = 0; i < d; ++i) acc += urow[i] * ht[i];
        row[std::size_t(tok)] = acc;
      }
      if (has_planted && match[std::size_t(t)]) {
        row[std::size_t(favored_id)] += planted;
      }
    }
    if (cache) {
      cache->x_final = x;
      cache->h = h;
      cache->inv_rf = inv_rf;
      cache->match = match;
    }
    return logits;
  }

  void backward(const Cache& cache, const Matrix& dlogits) {
    const int T = cache.T;
    const std::size_t td = std::size_t(T) * std::size_t(d);
    const double inv_sqrt_d = 1.0 / std::sqrt(double(d));

    // unembedding
    std::vector<double> dh(td, 0.0);
    {
      const double* unemb = base.data() + off_unemb;
      double* dunemb = base_grad.data() + off_unemb;
      double* dvb = base_grad.data() + off_vbias;
      for (int t = 0; t < T; ++t) {
        auto drow = dlogits.row(std::size_t(t));
        const double* ht = cache.h.data() + std::size_t(t) * d;
        double* dht = dh.data() + std::size_t(t) * d;
        for (int tok = 0; tok < V; ++tok) {
          const double g = drow[std::size_t(tok)];
          if (g == 0.0) continue;
          dvb[tok] += g;
          const double* urow = unemb + std::size_t(tok) * d;
          double* durow = dunemb + std::size_t(tok) * d;
          for (int i = 0; i < d; ++i) {
            durow[i] += g * ht[i];
            dht[i] += g * urow[i];
          }
        }
        if (has_planted && cache.match[std::size_t(t)]) {
          base_grad[off_planted] += drow[std::size_t(favored_id)];
        }
      }
    }

    // final norm
    std::vector<double> dx(td, 0.0);
    {
      const double* gf = base.data() + off_rmsf;
      double* dgf = base_grad.data() + off_rmsf;
      for (int t = 0; t < T; ++t) {
        rmsnorm_backward(dh.data() + std::size_t(t) * d,
                         cache.x_final.data() + std::size_t(t) * d, gf,
                         cache.inv_rf[std::size_t(t)], dx.data() + std::size_t(t) * d,
                         dgf);
      }
    }

    std::vector<double> dbvec(td), da(td), dq(td), dk(td), dv(td), du(td), dxm(td);
    std::vector<double> dpre(std::size_t(T) * std::size_t(f), 0.0);
    for (int l = L - 1; l >= 0; --l) {
      const LayerOffsets& lo = layer_off[std::size_t(l)];
      const LayerCache& lc = cache.layers[std::size_t(l)];

      // ---- MLP block: x_out = x_mid + W2 silu(W1 b + c1) + c2 ----
      std::fill(dbvec.begin(), dbvec.end(), 0.0);
      {
        const double* w1 = base.data() + lo.w1;
        const double* w2 = base.data() + lo.w2;
        double* dw1 = base_grad.data() + lo.w1;
        double* db1 = base_grad.data() + lo.b1;
        double* dw2 = base_grad.data() + lo.w2;
        double* db2 = base_grad.data() + lo.b2;
        for (int t = 0; t < T; ++t) {
          const double* dxt = dx.data() + std::size_t(t) * d;  // dm
          const double* at = lc.act.data() + std::size_t(t) * f;
          const double* pt = lc.pre.data() + std::size_t(t) * f;
          double* dpt = dpre.data() + std::size_t(t) * f;
          std::fill(dpt, dpt + f, 0.0);
          for (int i = 0; i < d; ++i) {
            const double g = dxt[i];
            if (g == 0.0) continue;
            db2[i] += g;
            const double* row = w2 + std::size_t(i) * f;
            double* drow = dw2 + std::size_t(i) * f;
            for (int j = 0; j < f; ++j) {
              drow[j] += g * at[j];
              dpt[j] += row[j] * g;  // dact
            }
          }
          const double* bt = lc.bvec.data() + std::size_t(t) * d;
          double* dbt = dbvec.data() + std::size_t(t) * d;
          for (int i = 0; i < f; ++i) {
            dpt[i] *= silu_grad(pt[i]);  // now dpre
            const double g = dpt[i];
            if (g == 0.0) continue;
            db1[i] += g;
            const double* row = w1 + std::size_t(i) * d;
            double* drow = dw1 + std::size_t(i) * d;
            for (int j = 0; j < d; ++j) {
              drow[j] += g * bt[j];
              dbt[j] += row[j] * g;
            }
          }
        }
      }
      // residual + rms2: dxm = dx + rms2_backward(dbvec)
      dxm = dx;
      {
        const double* g2 = base.data() + lo.rms2;
        double* dg2 = base_grad.data() + lo.rms2;
        for (int t = 0; t < T; ++t) {
          rmsnorm_backward(dbvec.data() + std::size_t(t) * d,
                           lc.x_mid.data() + std::size_t(t) * d, g2,
                           lc.inv_r2[std::size_t(t)], dxm.data() + std::size_t(t) * d,
                           dg2);
        }
      }

      // ---- attention block: x_mid = x_in + Wo u ----
      std::fill(du.begin(), du.end(), 0.0);
      project_backward(l, 3, lo.wo, lc.u, dxm, &du, T, lc);
      std::fill(dq.begin(), dq.end(), 0.0);
      std::fill(dk.begin(), dk.end(), 0.0);
      std::fill(dv.begin(), dv.end(), 0.0);
      {
        std::vector<double> datt(static_cast<std::size_t>(T));
        for (int t = 0; t < T; ++t) {
          const double* att_row = lc.att.data() + std::size_t(t) * T;
          const double* dut = du.data() + std::size_t(t) * d;
          double dot_sum = 0.0;
          for (int s = 0; s <= t; ++s) {
            const double* vs = lc.v.data() + std::size_t(s) * d;
            double acc = 0.0;
            for (int i = 0; i < d; ++i) acc += dut[i] * vs[i];
            datt[std::size_t(s)] = acc;
            dot_sum += att_row[s] * acc;
            double* dvs = dv.data() + std::size_t(s) * d;
            const double w_att = att_row[s];
            for (int i = 0; i < d; ++i) dvs[i] += w_att * dut[i];
          }
          const double* qt = lc.q.data() + std::size_t(t) * d;
          double* dqt = dq.data() + std::size_t(t) * d;
          for (int s = 0; s <= t; ++s) {
            double dscore = att_row[s] * (datt[std::size_t(s)] - dot_sum) * inv_sqrt_d;
            if (dscore == 0.0) continue;
            const double* ks = lc.k.data() + std::size_t(s) * d;
            double* dks = dk.data() + std::size_t(s) * d;
            for (int i = 0; i < d; ++i) {
              dqt[i] += dscore * ks[i];
              dks[i] += dscore * qt[i];
            }
          }
        }
      }
      std::fill(da.begin(), da.end(), 0.0);
      project_backward(l, 0, lo.wq, lc.a, dq, &da, T, lc);
      project_backward(l, 1, lo.wk, lc.a, dk, &da, T, lc);
      project_backward(l, 2, lo.wv, lc.a, dv, &da, T, lc);
      // residual + rms1: dx = dxm + rms1_backward(da)
      dx = dxm;
      {
        const double* g1 = base.data() + lo.rms1;
        double* dg1 = base_grad.data() + lo.rms1;
        for (int t = 0; t < T; ++t) {
          rmsnorm_backward(da.data() + std::size_t(t) * d,
                           lc.x_in.data() + std::size_t(t) * d, g1,
                           lc.inv_r1[std::size_t(t)], dx.data() + std::size_t(t) * d,
                           dg1);
        }
      }
    }

    // embeddings
    double* dtok = base_grad.data() + off_tok;
    double* dpos = base_grad.data() + off_pos;
    for (int t = 0; t < T; ++t) {
      const double* dxt = dx.data() + std::size_t(t) * d;
      double* e = dtok + std::size_t(cache.toks[std::size_t(t)]) * d;
      double* p = dpos + std::size_t(t) * d;
      for (int i = 0; i < d; ++i) {
        e[i] += dxt[i];
        p[i] += dxt[i];
      }
    }
  }

  void require_mutable() const {
    if (is_frozen) throw std::logic_error("model is a frozen snapshot");
  }
};

ToyLm::ToyLm(std::unique_ptr<Impl> impl) : impl_(std::move(impl)) {}
ToyLm::~ToyLm() = default;

const Tokenizer& ToyLm::tokenizer() const { return *impl_->tokenizer; }
int ToyLm::vocab_size() const { return impl_->V; }
int ToyLm::context_size() const { return impl_->C; }
int ToyLm::hidden_width() const { return impl_->d; }
const ToyLMConfig& ToyLm::config() const { return impl_->config; }
bool ToyLm::frozen() const { return impl_->is_frozen; }

std::vector<double> ToyLm::next_token_logits(std::span<const int> tokens) const {
  Matrix logits = impl_->forward(tokens, nullptr);
  auto row = logits.row(logits.rows() - 1);
  return {row.begin(), row.end()};
}

Matrix ToyLm::all_logits(std::span<const int> tokens) const {
  return impl_->forward(tokens, nullptr);
}

std::vector<double> ToyLm::hidden_state(std::span<const int> tokens) const {
  Impl::Cache cache;
  impl_->forward(tokens, &cache);
  const int d = impl_->d;
  if (impl_->config.mean_pool_embedding) {
    std::vector<double> out(std::size_t(d), 0.0);
    for (int t = 0; t < cache.T; ++t) {
      for (int i = 0; i < d; ++i) out[std::size_t(i)] += cache.h[std::size_t(t) * d + i];
    }
    for (double& v : out) v /= double(cache.T);
    return out;
  }
  const double* last = cache.h.data() + std::size_t(cache.T - 1) * d;
  return {last, last + d};
}

std::size_t ToyLm::param_count() const {
  return impl_->adapters_attached ? impl_->adapter.size() : impl_->base.size();
}

std::span<double> ToyLm::trainable_params() {
  impl_->require_mutable();
  return impl_->adapters_attached ? std::span<double>(impl_->adapter)
                                  : std::span<double>(impl_->base);
}

std::span<const double> ToyLm::trainable_params() const {
  return impl_->adapters_attached ? std::span<const double>(impl_->adapter)
                                  : std::span<const double>(impl_->base);
}

std::span<double> ToyLm::trainable_grads() {
  impl_->require_mutable();
  return impl_->adapters_attached ? std::span<double>(impl_->adapter_grad)
                                  : std::span<double>(impl_->base_grad);
}

void ToyLm::zero_grads() {
  impl_->require_mutable();
  std::fill(impl_->base_grad.begin(), impl_->base_grad.end(), 0.0);
  std::fill(impl_->adapter_grad.begin(), impl_->adapter_grad.end(), 0.0);
}

double ToyLm::backward_with(std::span<const int> tokens, const LogitLossFn& fn) {
  impl_->require_mutable();
  Impl::Cache cache;
  Matrix logits = impl_->forward(tokens, &cache);
  Matrix dlogits(logits.rows(), logits.cols());
  double loss = fn(logits, &dlogits);
  impl_->backward(cache, dlogits);
  return loss;
}

std::unique_ptr<CausalLM> ToyLm::snapshot() const {
  auto impl = std::make_unique<Impl>(*impl_);
  impl->is_frozen = true;
  return std::unique_ptr<CausalLM>(new ToyLm(std::move(impl)));
}

std::unique_ptr<CausalLM> ToyLm::clone() const {
  auto impl = std::make_unique<Impl>(*impl_);
  impl->is_frozen = false;
  return std::unique_ptr<CausalLM>(new ToyLm(std::move(impl)));
}

void ToyLm::attach_adapters(const AdapterConfig& cfg, uint64_t seed) {
  impl_->require_mutable();
  if (impl_->adapters_attached) throw std::logic_error("adapters already attached");
  if (cfg.rank < 1) throw std::invalid_argument("adapter rank must be >= 1");
  if (cfg.rank > impl_->d) {
    throw std::invalid_argument("adapter rank " + std::to_string(cfg.rank) +
                                " exceeds projection dimension " +
                                std::to_string(impl_->d));
  }
  if (cfg.target_blocks.empty()) throw std::invalid_argument("no target blocks");
  std::set<int> blocks;
  for (const auto& name : cfg.target_blocks) {
    int idx = -1;
    for (int i = 0; i < 4; ++i) {
      if (name == kBlockNames[i]) idx = i;
    }
    if (idx < 0) throw std::invalid_argument("target block absent from model: " + name);
    blocks.insert(idx);
  }
  impl_->adapter_cfg = cfg;
  impl_->adapter_rank = cfg.rank;
  impl_->slot_of.assign(std::size_t(impl_->L), {-1, -1, -1, -1});
  impl_->slots.clear();
  std::size_t off = 0;
  const std::size_t a_size = std::size_t(cfg.rank) * std::size_t(impl_->d);
  for (int l = 0; l < impl_->L; ++l) {
    for (int b : blocks) {
      impl_->slot_of[std::size_t(l)][std::size_t(b)] = int(impl_->slots.size());
      impl_->slots.push_back({off, off + a_size});
      off += 2 * a_size;
    }
  }
  impl_->adapter.assign(off, 0.0);
  impl_->adapter_grad.assign(off, 0.0);
  // A gaussian, B zero: the adapter delta starts at exactly zero.
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 0.1);
  for (const auto& slot : impl_->slots) {
    for (std::size_t i = 0; i < a_size; ++i) impl_->adapter[slot.off_a + i] = dist(rng);
  }
  impl_->adapters_attached = true;
}

bool ToyLm::has_adapters() const { return impl_->adapters_attached; }

std::span<const double> ToyLm::base_params() const { return impl_->base; }

void ToyLm::set_train_mode(bool on, uint64_t dropout_seed) {
  impl_->require_mutable();
  impl_->train_mode = on;
  impl_->dropout_rng.seed(dropout_seed);
}

ToyLm::WeightViews ToyLm::weights() const {
  const Impl& im = *impl_;
  WeightViews w;
  auto view = [&](std::size_t off, std::size_t n) {
    return std::span<const double>(im.base.data() + off, n);
  };
  const std::size_t dd = std::size_t(im.d);
  w.tok_emb = view(im.off_tok, std::size_t(im.V) * dd);
  w.pos_emb = view(im.off_pos, std::size_t(im.C) * dd);
  for (const auto& lo : im.layer_off) {
    WeightViews::Layer layer;
    layer.rms1 = view(lo.rms1, dd);
    layer.wq = view(lo.wq, dd * dd);
    layer.wk = view(lo.wk, dd * dd);
    layer.wv = view(lo.wv, dd * dd);
    layer.wo = view(lo.wo, dd * dd);
    layer.rms2 = view(lo.rms2, dd);
    layer.w1 = view(lo.w1, std::size_t(im.f) * dd);
    layer.b1 = view(lo.b1, std::size_t(im.f));
    layer.w2 = view(lo.w2, dd * std::size_t(im.f));
    layer.b2 = view(lo.b2, dd);
    w.layers.push_back(layer);
  }
  w.rms_final = view(im.off_rmsf, dd);
  w.unembed = view(im.off_unemb, std::size_t(im.V) * dd);
  w.vocab_bias = view(im.off_vbias, std::size_t(im.V));
  w.has_planted = im.has_planted;
  w.planted_scale = im.has_planted ? im.base[im.off_planted] : 0.0;
  w.mlp_width = im.f;
  return w;
}

namespace {

std::unique_ptr<ToyLm::Impl> build_structure(const ToyLMConfig& config) {
  if (config.layers < 1) throw std::invalid_argument("layers must be >= 1");
  if (config.hidden < 2) throw std::invalid_argument("hidden width must be >= 2");
  if (config.context < 2) throw std::invalid_argument("context must be >= 2");
  if (config.vocab_size > 256) throw std::invalid_argument("vocab_size must be <= 256");

  std::vector<std::string> words;
  std::set<std::string> seen;
  auto add = [&](const std::string& w) {
    if (seen.insert(w).second) words.push_back(w);
  };
  for (const auto& w : config.extra_words) add(w);
  for (const auto& w : builtin_word_list()) add(w);
  if (config.vocab_size > 0) {
    std::size_t want = std::size_t(config.vocab_size);
    if (want < 3) throw std::invalid_argument("vocab_size must be >= 3");
    std::size_t want_words = want - 2;  // <bos>, <unk>
    if (words.size() > want_words) words.resize(want_words);
    int filler = 0;
    while (words.size() < want_words) add("w" + std::to_string(filler++));
  }

  auto impl = std::make_unique<ToyLm::Impl>();
  impl->config = config;
  impl->tokenizer = std::make_shared<Tokenizer>(words);
  impl->V = impl->tokenizer->vocab_size();
  impl->C = config.context;
  impl->d = config.hidden;
  impl->f = 2 * config.hidden;
  impl->L = config.layers;
  impl->has_planted = config.planted_bias.has_value();
  impl->compute_layout();
  if (impl->base_count > kMaxParams) {
    throw std::invalid_argument("configuration exceeds the 100k parameter budget (" +
                                std::to_string(impl->base_count) + ")");
  }
  impl->base.assign(impl->base_count, 0.0);
  impl->base_grad.assign(impl->base_count, 0.0);

  if (impl->has_planted) {
    const PlantedBias& pb = *config.planted_bias;
    if (!std::isfinite(pb.log_odds)) {
      throw std::invalid_argument("planted bias strength is non-finite");
    }
    auto favored = impl->tokenizer->single_token_id(pb.favored_token);
    if (!favored) {
      throw std::invalid_argument("favored token is not a single vocabulary token: " +
                                  pb.favored_token);
    }
    impl->favored_id = *favored;
    impl->pattern_tokens = impl->tokenizer->encode(pb.prompt_pattern, false);
    if (impl->pattern_tokens.empty()) {
      throw std::invalid_argument("planted bias pattern tokenizes to nothing");
    }
    for (int id : impl->pattern_tokens) {
      if (id == Tokenizer::kUnk) {
        throw std::invalid_argument("planted bias pattern contains out-of-vocabulary words");
      }
    }
    impl->counterpart_id = -1;
    for (const auto& pair : config.tied_pairs) {
      if (pair[0] == pb.favored_token) {
        auto other = impl->tokenizer->single_token_id(pair[1]);
        if (other) impl->counterpart_id = *other;
      } else if (pair[1] == pb.favored_token) {
        auto other = impl->tokenizer->single_token_id(pair[0]);
        if (other) impl->counterpart_id = *other;
      }
    }
    if (impl->counterpart_id < 0) {
      throw std::invalid_argument(
          "the favored token must belong to a tied pair so the planted margin is exact");
    }
  }
  return impl;
}

void init_params(ToyLm::Impl* impl) {
  const ToyLMConfig& config = impl->config;
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  auto fill_normal = [&](std::size_t off, std::size_t n) {
    if (config.init_scale == 0.0) return;  // stays zero: the uniform model
    for (std::size_t i = 0; i < n; ++i) {
      impl->base[off + i] = config.init_scale * dist(rng);
    }
  };
  auto fill_const = [&](std::size_t off, std::size_t n, double v) {
    for (std::size_t i = 0; i < n; ++i) impl->base[off + i] = v;
  };
  const std::size_t dd = std::size_t(impl->d);
  fill_normal(impl->off_tok, std::size_t(impl->V) * dd);
  fill_normal(impl->off_pos, std::size_t(impl->C) * dd);
  for (const auto& lo : impl->layer_off) {
    fill_const(lo.rms1, dd, 1.0);
    fill_normal(lo.wq, dd * dd);
    fill_normal(lo.wk, dd * dd);
    fill_normal(lo.wv, dd * dd);
    fill_normal(lo.wo, dd * dd);
    fill_const(lo.rms2, dd, 1.0);
    fill_normal(lo.w1, std::size_t(impl->f) * dd);
    fill_normal(lo.w2, dd * std::size_t(impl->f));
  }
  fill_const(impl->off_rmsf, dd, 1.0);
  {
    double scale = config.unembed_scale < 0.0 ? config.init_scale : config.unembed_scale;
    if (scale != 0.0) {
      for (std::size_t i = 0; i < std::size_t(impl->V) * dd; ++i) {
        impl->base[impl->off_unemb + i] = scale * dist(rng);
      }
    }
  }

  // Tied pairs share output rows, vocabulary bias and input embeddings, so
  // their logits match on every context at initialization.
  for (const auto& pair : impl->config.tied_pairs) {
    auto a = impl->tokenizer->single_token_id(pair[0]);
    auto b = impl->tokenizer->single_token_id(pair[1]);
    if (!a || !b) {
      throw std::invalid_argument("tied pair words must be single vocabulary tokens: " +
                                  pair[0] + "/" + pair[1]);
    }
    for (std::size_t i = 0; i < dd; ++i) {
      impl->base[impl->off_unemb + std::size_t(*b) * dd + i] =
          impl->base[impl->off_unemb + std::size_t(*a) * dd + i];
      impl->base[impl->off_tok + std::size_t(*b) * dd + i] =
          impl->base[impl->off_tok + std::size_t(*a) * dd + i];
    }
    impl->base[impl->off_vbias + std::size_t(*b)] =
        impl->base[impl->off_vbias + std::size_t(*a)];
  }
  if (impl->has_planted) {
    impl->base[impl->off_planted] = impl->config.planted_bias->log_odds;
  }
}

}  // namespace

std::unique_ptr<ToyLm> make_toy_model(const ToyLMConfig& config) {
  auto impl = build_structure(config);
  init_params(impl.get());
  std::unique_ptr<ToyLm> model(new ToyLm(std::move(impl)));
  if (config.planted_bias) {
    std::vector<int> probe = model->tokenize(config.planted_bias->prompt_pattern);
    std::vector<double> logits = model->next_token_logits(probe);
    double margin = logits[std::size_t(model->impl_->favored_id)] -
                    logits[std::size_t(model->impl_->counterpart_id)];
    if (std::abs(margin - config.planted_bias->log_odds) > 1e-9) {
      throw std::logic_error("planted bias verification failed: margin " +
                             std::to_string(margin));
    }
  }
  return model;
}

// ---- configuration and model (de)serialization ----

namespace {

nlohmann::ordered_json config_json(const ToyLMConfig& c) {
  nlohmann::ordered_json j;
  j["vocab_size"] = c.vocab_size;
  j["layers"] = c.layers;
  j["hidden"] = c.hidden;
  j["context"] = c.context;
  j["seed"] = c.seed;
  j["init_scale"] = c.init_scale;
  j["unembed_scale"] = c.unembed_scale;
  j["extra_words"] = c.extra_words;
  j["tied_pairs"] = nlohmann::ordered_json::array();
  for (const auto& p : c.tied_pairs) {
    j["tied_pairs"].push_back({p[0], p[1]});
  }
  if (c.planted_bias) {
    j["planted_bias"] = {{"prompt_pattern", c.planted_bias->prompt_pattern},
                         {"favored_token", c.planted_bias->favored_token},
                         {"log_odds", c.planted_bias->log_odds}};
  }
  j["mean_pool_embedding"] = c.mean_pool_embedding;
  return j;
}

ToyLMConfig config_from_json(const nlohmann::json& j) {
  ToyLMConfig c;
  c.vocab_size = j.value("vocab_size", 0);
  c.layers = j.value("layers", 2);
  c.hidden = j.value("hidden", 32);
  c.context = j.value("context", 64);
  c.seed = j.value("seed", uint64_t(0));
  c.init_scale = j.value("init_scale", 0.08);
  c.unembed_scale = j.value("unembed_scale", -1.0);
  if (j.contains("extra_words")) {
    c.extra_words = j.at("extra_words").get<std::vector<std::string>>();
  }
  if (j.contains("tied_pairs")) {
    for (const auto& p : j.at("tied_pairs")) {
      c.tied_pairs.push_back({p.at(0).get<std::string>(), p.at(1).get<std::string>()});
    }
  }
  if (j.contains("planted_bias") && !j.at("planted_bias").is_null()) {
    const auto& pb = j.at("planted_bias");
    c.planted_bias = PlantedBias{pb.at("prompt_pattern").get<std::string>(),
                                 pb.at("favored_token").get<std::string>(),
                                 pb.at("log_odds").get<double>()};
  }
  c.mean_pool_embedding = j.value("mean_pool_embedding", false);
  return c;
}

}  // namespace

ToyLMConfig toy_config_from_json(const std::string& json_text) {
  return config_from_json(nlohmann::json::parse(json_text));
}

std::string toy_config_to_json(const ToyLMConfig& config) {
  return config_json(config).dump();
}

void ToyLm::save(const std::string& path) const {
  nlohmann::ordered_json j;
  j["format"] = "fairpipe-toy-lm";
  j["version"] = 1;
  j["config"] = config_json(impl_->config);
  j["params"] = impl_->base;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write model file: " + path);
  out << j.dump();
}

std::unique_ptr<ToyLm> ToyLm::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open model file: " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  if (j.value("format", "") != "fairpipe-toy-lm" || j.value("version", 0) != 1) {
    throw std::runtime_error("unrecognized model file format: " + path);
  }
  auto impl = build_structure(config_from_json(j.at("config")));
  std::vector<double> params = j.at("params").get<std::vector<double>>();
  if (params.size() != impl->base.size()) {
    throw std::runtime_error("model file parameter count mismatch");
  }
  impl->base = std::move(params);
  return std::unique_ptr<ToyLm>(new ToyLm(std::move(impl)));
}

void ToyLm::save_adapters(const std::string& path) const {
  if (!impl_->adapters_attached) throw std::logic_error("no adapters attached");
  nlohmann::ordered_json j;
  j["format"] = "fairpipe-adapters";
  j["version"] = 1;
  j["config"] = {{"rank", impl_->adapter_cfg.rank},
                 {"scaling", impl_->adapter_cfg.scaling},
                 {"dropout", impl_->adapter_cfg.dropout},
                 {"target_blocks", impl_->adapter_cfg.target_blocks}};
  nlohmann::ordered_json blocks = nlohmann::ordered_json::object();
  const std::size_t a_size = std::size_t(impl_->adapter_rank) * std::size_t(impl_->d);
  for (int l = 0; l < impl_->L; ++l) {
    for (int b = 0; b < 4; ++b) {
      int slot = impl_->slot_of[std::size_t(l)][std::size_t(b)];
      if (slot < 0) continue;
      std::string key = "layer" + std::to_string(l) + "." + kBlockNames[b];
      const auto& s = impl_->slots[std::size_t(slot)];
      blocks[key] = {
          {"a", std::vector<double>(impl_->adapter.begin() + long(s.off_a),
                                    impl_->adapter.begin() + long(s.off_a + a_size))},
          {"b", std::vector<double>(impl_->adapter.begin() + long(s.off_b),
                                    impl_->adapter.begin() + long(s.off_b + a_size))}};
    }
  }
  j["blocks"] = std::move(blocks);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write adapter file: " + path);
  out << j.dump();
}

void ToyLm::load_adapters(const std::string& path) {
  impl_->require_mutable();
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open adapter file: " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  if (j.value("format", "") != "fairpipe-adapters" || j.value("version", 0) != 1) {
    throw std::runtime_error("unrecognized adapter file format: " + path);
  }
  AdapterConfig cfg;
  cfg.rank = j.at("config").at("rank").get<int>();
  cfg.scaling = j.at("config").at("scaling").get<double>();
  cfg.dropout = j.at("config").at("dropout").get<double>();
  cfg.target_blocks = j.at("config").at("target_blocks").get<std::vector<std::string>>();
  if (!impl_->adapters_attached) attach_adapters(cfg, 0);
  const std::size_t a_size = std::size_t(impl_->adapter_rank) * std::size_t(impl_->d);
  for (int l = 0; l < impl_->L; ++l) {
    for (int b = 0; b < 4; ++b) {
      int slot = impl_->slot_of[std::size_t(l)][std::size_t(b)];
      if (slot < 0) continue;
      std::string key = "layer" + std::to_string(l) + "." + kBlockNames[b];
      const auto& block = j.at("blocks").at(key);
      std::vector<double> a = block.at("a").get<std::vector<double>>();
      std::vector<double> bvals = block.at("b").get<std::vector<double>>();
      if (a.size() != a_size || bvals.size() != a_size) {
        throw std::runtime_error("adapter block size mismatch for " + key);
      }
      const auto& s = impl_->slots[std::size_t(slot)];
      std::copy(a.begin(), a.end(), impl_->adapter.begin() + long(s.off_a));
      std::copy(bvals.begin(), bvals.end(), impl_->adapter.begin() + long(s.off_b));
    }
  }
}

}  // namespace fairpipe
