#pragma once

// Tiny multi-head autoregressive network: a slot compressor for frame
// features, separate embedding tables for time / score / text tokens, a
// pre-norm causal transformer trunk, and one linear decoding head per task.
// Forward and backward passes are written out by hand and templated on the
// scalar type (float for training, double for gradient checks).

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "evseq/decoder.hpp"
#include "evseq/errors.hpp"
#include "evseq/event.hpp"
#include "evseq/sequence.hpp"
#include "evseq/tokenizers.hpp"

namespace evseq::nn {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using RowVec = Eigen::Matrix<S, 1, Eigen::Dynamic>;
using Index = Eigen::Index;

// Portable seeded generator: mt19937_64 with hand-rolled distributions so
// streams are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  std::size_t below(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n; }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * M_PI * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * M_PI * u2);
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

  std::uint64_t next() { return engine_(); }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

struct ToyNetConfig {
  std::size_t d_model = 32;
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t mlp_mult = 4;
  std::size_t slots_per_frame = kDefaultSlotsPerFrame;
  std::size_t patches = 4;
  std::size_t feature_dim = 16;
  std::size_t max_positions = 1024;
  double init_scale = 1.0;

  std::size_t mlp_width() const { return d_model * mlp_mult; }
  std::size_t head_dim() const { return d_model / heads; }

  void validate() const {
    if (d_model == 0 || layers == 0 || heads == 0 || mlp_mult == 0 || slots_per_frame == 0 || patches == 0 ||
        feature_dim == 0 || max_positions == 0) {
      throw ContractError("toy net dimensions must be positive");
    }
    if (d_model % heads != 0) throw ContractError("d_model must be divisible by heads");
    if (layers > 4 || d_model > 128 || heads > 4) throw ContractError("toy net limited to L<=4, d<=128, heads<=4");
  }

  friend bool operator==(const ToyNetConfig&, const ToyNetConfig&) = default;
};

inline constexpr const char* kGroups[] = {"compressor", "embed_time",  "embed_score", "embed_text",
                                          "trunk",      "head_time",   "head_score",  "head_text"};

template <class S>
struct NamedTensor {
  std::string name;
  std::string group;
  Mat<S>* value;
};

template <class S>
struct LayerParams {
  Mat<S> ln1_g, ln1_b;
  Mat<S> wq, bq, wk, bk, wv, bv, wo, bo;
  Mat<S> ln2_g, ln2_b;
  Mat<S> w1, b1, w2, b2;
};

template <class S>
struct ToyNetParams {
  ToyNetConfig config;
  // Slot compressor: learned queries cross-attending over patch features.
  Mat<S> slot_queries, key_proj, value_proj;
  Mat<S> embed_time, embed_score, embed_text;
  Mat<S> positions;
  std::vector<LayerParams<S>> layers;
  Mat<S> lnf_g, lnf_b;
  Mat<S> head_time_w, head_time_b;
  Mat<S> head_score_w, head_score_b;
  Mat<S> head_text_w, head_text_b;

  static ToyNetParams zeros(const ToyNetConfig& c) {
    c.validate();
    ToyNetParams p;
    p.config = c;
    const auto d = static_cast<Index>(c.d_model);
    const auto m = static_cast<Index>(c.mlp_width());
    p.slot_queries = Mat<S>::Zero(static_cast<Index>(c.slots_per_frame), d);
    p.key_proj = Mat<S>::Zero(static_cast<Index>(c.feature_dim), d);
    p.value_proj = Mat<S>::Zero(static_cast<Index>(c.feature_dim), d);
    p.embed_time = Mat<S>::Zero(digit_vocab::kSize, d);
    p.embed_score = Mat<S>::Zero(digit_vocab::kSize, d);
    p.embed_text = Mat<S>::Zero(text_vocab::kSize, d);
    p.positions = Mat<S>::Zero(static_cast<Index>(c.max_positions), d);
    p.layers.resize(c.layers);
    for (auto& l : p.layers) {
      l.ln1_g = Mat<S>::Zero(1, d);
      l.ln1_b = Mat<S>::Zero(1, d);
      l.wq = Mat<S>::Zero(d, d);
      l.bq = Mat<S>::Zero(1, d);
      l.wk = Mat<S>::Zero(d, d);
      l.bk = Mat<S>::Zero(1, d);
      l.wv = Mat<S>::Zero(d, d);
      l.bv = Mat<S>::Zero(1, d);
      l.wo = Mat<S>::Zero(d, d);
      l.bo = Mat<S>::Zero(1, d);
      l.ln2_g = Mat<S>::Zero(1, d);
      l.ln2_b = Mat<S>::Zero(1, d);
      l.w1 = Mat<S>::Zero(d, m);
      l.b1 = Mat<S>::Zero(1, m);
      l.w2 = Mat<S>::Zero(m, d);
      l.b2 = Mat<S>::Zero(1, d);
    }
    p.lnf_g = Mat<S>::Zero(1, d);
    p.lnf_b = Mat<S>::Zero(1, d);
    p.head_time_w = Mat<S>::Zero(d, digit_vocab::kSize);
    p.head_time_b = Mat<S>::Zero(1, digit_vocab::kSize);
    p.head_score_w = Mat<S>::Zero(d, digit_vocab::kSize);
    p.head_score_b = Mat<S>::Zero(1, digit_vocab::kSize);
    p.head_text_w = Mat<S>::Zero(d, text_vocab::kSize);
    p.head_text_b = Mat<S>::Zero(1, text_vocab::kSize);
    return p;
  }

  // Every tensor with a stable name and its parameter group, in a fixed order.
  std::vector<NamedTensor<S>> tensors() {
    std::vector<NamedTensor<S>> t = {
        {"compressor.slot_queries", "compressor", &slot_queries},
        {"compressor.key_proj", "compressor", &key_proj},
        {"compressor.value_proj", "compressor", &value_proj},
        {"embed_time", "embed_time", &embed_time},
        {"embed_score", "embed_score", &embed_score},
        {"embed_text", "embed_text", &embed_text},
        {"positions", "trunk", &positions},
    };
    for (std::size_t i = 0; i < layers.size(); ++i) {
      auto& l = layers[i];
      const std::string pre = "layer" + std::to_string(i) + ".";
      for (auto [name, m] : std::initializer_list<std::pair<const char*, Mat<S>*>>{
               {"ln1_g", &l.ln1_g}, {"ln1_b", &l.ln1_b}, {"wq", &l.wq}, {"bq", &l.bq}, {"wk", &l.wk},
               {"bk", &l.bk},       {"wv", &l.wv},       {"bv", &l.bv}, {"wo", &l.wo}, {"bo", &l.bo},
               {"ln2_g", &l.ln2_g}, {"ln2_b", &l.ln2_b}, {"w1", &l.w1}, {"b1", &l.b1}, {"w2", &l.w2},
               {"b2", &l.b2}}) {
        t.push_back({pre + name, "trunk", m});
      }
    }
    t.push_back({"lnf_g", "trunk", &lnf_g});
    t.push_back({"lnf_b", "trunk", &lnf_b});
    t.push_back({"head_time.w", "head_time", &head_time_w});
    t.push_back({"head_time.b", "head_time", &head_time_b});
    t.push_back({"head_score.w", "head_score", &head_score_w});
    t.push_back({"head_score.b", "head_score", &head_score_b});
    t.push_back({"head_text.w", "head_text", &head_text_w});
    t.push_back({"head_text.b", "head_text", &head_text_b});
    return t;
  }

  std::vector<NamedTensor<S>> tensors() const { return const_cast<ToyNetParams*>(this)->tensors(); }

  const Mat<S>& head_weight(Head h) const {
    return h == Head::time ? head_time_w : (h == Head::score ? head_score_w : head_text_w);
  }
  const Mat<S>& head_bias(Head h) const {
    return h == Head::time ? head_time_b : (h == Head::score ? head_score_b : head_text_b);
  }
  Mat<S>& head_weight(Head h) { return h == Head::time ? head_time_w : (h == Head::score ? head_score_w : head_text_w); }
  Mat<S>& head_bias(Head h) { return h == Head::time ? head_time_b : (h == Head::score ? head_score_b : head_text_b); }

  const Mat<S>& embedding(TokenTag t) const {
    return t == TokenTag::time ? embed_time : (t == TokenTag::score ? embed_score : embed_text);
  }
  Mat<S>& embedding(TokenTag t) {
    return t == TokenTag::time ? embed_time : (t == TokenTag::score ? embed_score : embed_text);
  }

  template <class T>
  ToyNetParams<T> cast() const {
    ToyNetParams<T> out = ToyNetParams<T>::zeros(config);
    auto src = tensors();
    auto dst = out.tensors();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i].value = src[i].value->template cast<T>();
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors()) n += static_cast<std::size_t>(t.value->size());
    return n;
  }

  bool all_finite() const {
    for (const auto& t : tensors()) {
      if (!t.value->allFinite()) return false;
    }
    return true;
  }
};

template <class S>
void fill_normal(Mat<S>& m, Rng& rng, double stddev) {
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(rng.normal() * stddev);
}

// Random initialization. Time and score embedding rows start as copies of
// the text embeddings of the matching characters ('0'-'9', '.', ',' for
// <sep>) and of the text <sync> row.
template <class S>
ToyNetParams<S> init_params(const ToyNetConfig& c, std::uint64_t seed) {
  ToyNetParams<S> p = ToyNetParams<S>::zeros(c);
  Rng rng(seed);
  const double d = static_cast<double>(c.d_model);
  const double s = c.init_scale;
  fill_normal(p.slot_queries, rng, s);
  fill_normal(p.key_proj, rng, s / std::sqrt(static_cast<double>(c.feature_dim)));
  fill_normal(p.value_proj, rng, s / std::sqrt(static_cast<double>(c.feature_dim)));
  fill_normal(p.embed_text, rng, s * 0.5);
  fill_normal(p.positions, rng, s * 0.5);
  const double out_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(c.layers));
  for (auto& l : p.layers) {
    l.ln1_g.setOnes();
    l.ln2_g.setOnes();
    fill_normal(l.wq, rng, s / std::sqrt(d));
    fill_normal(l.wk, rng, s / std::sqrt(d));
    fill_normal(l.wv, rng, s / std::sqrt(d));
    fill_normal(l.wo, rng, s * out_scale / std::sqrt(d));
    fill_normal(l.w1, rng, s / std::sqrt(d));
    fill_normal(l.w2, rng, s * out_scale / std::sqrt(static_cast<double>(c.mlp_width())));
  }
  p.lnf_g.setOnes();
  fill_normal(p.head_time_w, rng, s / std::sqrt(d));
  fill_normal(p.head_score_w, rng, s / std::sqrt(d));
  fill_normal(p.head_text_w, rng, s / std::sqrt(d));
  for (int i = 0; i < digit_vocab::kSize; ++i) {
    int text_row = text_vocab::kSync;
    if (i <= 9) text_row = '0' + i;
    if (i == digit_vocab::kDot) text_row = '.';
    if (i == digit_vocab::kSep) text_row = ',';
    p.embed_time.row(i) = p.embed_text.row(text_row);
    p.embed_score.row(i) = p.embed_text.row(text_row);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Primitive layers

template <class S>
struct LayerNormCache {
  Mat<S> xhat;
  std::vector<S> rstd;
};

template <class S>
Mat<S> layernorm_forward(const Mat<S>& x, const Mat<S>& g, const Mat<S>& b, LayerNormCache<S>* cache) {
  constexpr S kEps = S(1e-5);
  const Index n = x.rows();
  const Index d = x.cols();
  Mat<S> y(n, d);
  if (cache) {
    cache->xhat.resize(n, d);
    cache->rstd.resize(static_cast<std::size_t>(n));
  }
  for (Index r = 0; r < n; ++r) {
    const S mu = x.row(r).mean();
    const RowVec<S> c = x.row(r).array() - mu;
    const S var = c.squaredNorm() / static_cast<S>(d);
    const S rstd = S(1) / std::sqrt(var + kEps);
    const RowVec<S> xh = c * rstd;
    y.row(r) = xh.cwiseProduct(g.row(0)) + b.row(0);
    if (cache) {
      cache->xhat.row(r) = xh;
      cache->rstd[static_cast<std::size_t>(r)] = rstd;
    }
  }
  return y;
}

template <class S>
Mat<S> layernorm_backward(const Mat<S>& dy, const Mat<S>& g, const LayerNormCache<S>& c, Mat<S>& dg, Mat<S>& db) {
  const Index n = dy.rows();
  const Index d = dy.cols();
  Mat<S> dx(n, d);
  dg.row(0) += (dy.cwiseProduct(c.xhat)).colwise().sum();
  db.row(0) += dy.colwise().sum();
  for (Index r = 0; r < n; ++r) {
    const RowVec<S> dxh = dy.row(r).cwiseProduct(g.row(0));
    const S mean_dxh = dxh.mean();
    const S mean_dxh_xh = dxh.dot(c.xhat.row(r)) / static_cast<S>(d);
    dx.row(r) = (dxh.array() - mean_dxh - c.xhat.row(r).array() * mean_dxh_xh) * c.rstd[static_cast<std::size_t>(r)];
  }
  return dx;
}

template <class S>
inline S gelu(S u) {
  constexpr S kC = S(0.7978845608028654);  // sqrt(2/pi)
  const S t = std::tanh(kC * (u + S(0.044715) * u * u * u));
  return S(0.5) * u * (S(1) + t);
}

template <class S>
inline S gelu_grad(S u) {
  constexpr S kC = S(0.7978845608028654);
  const S t = std::tanh(kC * (u + S(0.044715) * u * u * u));
  return S(0.5) * (S(1) + t) + S(0.5) * u * (S(1) - t * t) * kC * (S(1) + S(3 * 0.044715) * u * u);
}

template <class S>
void softmax_row_inplace(Eigen::Ref<RowVec<S>> row, Index valid) {
  S mx = row.head(valid).maxCoeff();
  S sum = 0;
  for (Index j = 0; j < valid; ++j) {
    const S e = std::exp(row(j) - mx);
    row(j) = e;
    sum += e;
  }
  row.head(valid) /= sum;
  if (valid < row.size()) row.tail(row.size() - valid).setZero();
}

// Causal softmax over a block of score rows: row i keeps columns
// [0, valid(i)) and zeroes the rest.
template <class S, class Valid>
void masked_softmax_rows(Mat<S>& sc, Valid valid) {
  const S neg = -std::numeric_limits<S>::infinity();
  for (Index i = 0; i < sc.rows(); ++i) {
    const Index v = valid(i);
    if (v < sc.cols()) sc.row(i).tail(sc.cols() - v).setConstant(neg);
  }
  const Eigen::Matrix<S, Eigen::Dynamic, 1> mx = sc.rowwise().maxCoeff();
  // Separate statements keep each step vectorized.
  sc.colwise() -= mx;
  sc = sc.array().exp().matrix();
  const Eigen::Matrix<S, Eigen::Dynamic, 1> inv = sc.rowwise().sum().cwiseInverse();
  sc = inv.asDiagonal() * sc;
}

template <class S>
Mat<S> gelu_matrix(const Mat<S>& u) {
  const S c = S(0.7978845608028654);
  const auto a = u.array();
  return (S(0.5) * a * (S(1) + (c * (a + S(0.044715) * a.cube())).tanh())).matrix();
}

template <class S>
Mat<S> gelu_grad_matrix(const Mat<S>& u) {
  const S c = S(0.7978845608028654);
  const auto a = u.array();
  const auto t = (c * (a + S(0.044715) * a.cube())).tanh().eval();
  return (S(0.5) * (S(1) + t) + S(0.5) * a * (S(1) - t.square()) * c * (S(1) + S(3 * 0.044715) * a.square())).matrix();
}

template <class S>
RowVec<S> log_softmax(const RowVec<S>& logits) {
  const S mx = logits.maxCoeff();
  const S lse = mx + std::log((logits.array() - mx).exp().sum());
  return logits.array() - lse;
}

// ---------------------------------------------------------------------------
// Slot compressor

template <class S>
struct CompressorCache {
  std::vector<Mat<S>> patches, keys, values, attn;
};

// Compresses T frames of N x D patch features to T x slots embeddings of
// width d. Output row f * slots + s holds slot s of frame f.
template <class S>
Mat<S> compress_frames(const ToyNetParams<S>& p, const FrameFeatures& features, CompressorCache<S>* cache = nullptr) {
  const auto& c = p.config;
  if (features.frames == 0) return Mat<S>(0, static_cast<Index>(c.d_model));
  if (features.patches != c.patches || features.dim != c.feature_dim) {
    throw ContractError("frame features shape (" + std::to_string(features.patches) + "x" +
                        std::to_string(features.dim) + ") does not match compressor (" + std::to_string(c.patches) +
                        "x" + std::to_string(c.feature_dim) + ")");
  }
  const auto slots = static_cast<Index>(c.slots_per_frame);
  const auto n = static_cast<Index>(features.patches);
  const auto dim = static_cast<Index>(features.dim);
  const S scale = S(1) / std::sqrt(static_cast<S>(c.d_model));
  Mat<S> out(static_cast<Index>(features.frames) * slots, static_cast<Index>(c.d_model));
  if (cache) {
    cache->patches.resize(features.frames);
    cache->keys.resize(features.frames);
    cache->values.resize(features.frames);
    cache->attn.resize(features.frames);
  }
  for (std::size_t f = 0; f < features.frames; ++f) {
    const Mat<S> patch = Eigen::Map<const Mat<double>>(features.frame(f), n, dim).template cast<S>();
    Mat<S> keys = patch * p.key_proj;
    Mat<S> values = patch * p.value_proj;
    Mat<S> attn = (p.slot_queries * keys.transpose()) * scale;
    for (Index r = 0; r < slots; ++r) softmax_row_inplace<S>(attn.row(r), n);
    out.middleRows(static_cast<Index>(f) * slots, slots) = attn * values;
    if (cache) {
      cache->patches[f] = patch;
      cache->keys[f] = std::move(keys);
      cache->values[f] = std::move(values);
      cache->attn[f] = std::move(attn);
    }
  }
  return out;
}

template <class S>
void compress_frames_backward(const ToyNetParams<S>& p, const CompressorCache<S>& cache, const Mat<S>& d_out,
                              ToyNetParams<S>& grads) {
  const auto slots = static_cast<Index>(p.config.slots_per_frame);
  const S scale = S(1) / std::sqrt(static_cast<S>(p.config.d_model));
  for (std::size_t f = 0; f < cache.attn.size(); ++f) {
    const auto dy = d_out.middleRows(static_cast<Index>(f) * slots, slots);
    if (dy.isZero(0)) continue;
    const Mat<S>& a = cache.attn[f];
    const Mat<S> d_attn = dy * cache.values[f].transpose();
    const Mat<S> d_values = a.transpose() * dy;
    const Eigen::Matrix<S, Eigen::Dynamic, 1> rowdot = a.cwiseProduct(d_attn).rowwise().sum();
    Mat<S> d_logits = d_attn;
    d_logits.colwise() -= rowdot;
    d_logits = d_logits.cwiseProduct(a) * scale;
    grads.slot_queries += d_logits * cache.keys[f];
    const Mat<S> d_keys = d_logits.transpose() * p.slot_queries;
    grads.key_proj += cache.patches[f].transpose() * d_keys;
    grads.value_proj += cache.patches[f].transpose() * d_values;
  }
}

// ---------------------------------------------------------------------------
// Trunk

template <class S>
struct LayerCache {
  std::vector<Index> rows;
  Index keys = 0;
  Mat<S> x_in;
  LayerNormCache<S> ln1;
  Mat<S> h;
  Mat<S> q_in, q, k, v;
  std::vector<Mat<S>> probs;
  Mat<S> ctx;
  Mat<S> z;
  LayerNormCache<S> ln2;
  Mat<S> h2, u, g;
};

inline constexpr Index kAttentionChunk = 64;

template <class S>
Mat<S> gather_rows(const Mat<S>& m, const std::vector<Index>& rows) {
  Mat<S> out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = m.row(rows[i]);
  return out;
}

// One pre-norm block evaluated at query rows `rows` (ascending) of x, with
// causal attention over x's rows [0, rows.back()]. Returns |rows| x d.
template <class S>
Mat<S> layer_forward(const LayerParams<S>& lp, const ToyNetConfig& c, const Mat<S>& x, const std::vector<Index>& rows,
                     LayerCache<S>* cache) {
  const Index r = static_cast<Index>(rows.size());
  const Index nk = rows.back() + 1;
  const auto nh = static_cast<Index>(c.heads);
  const auto dh = static_cast<Index>(c.head_dim());
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));

  LayerNormCache<S> ln1;
  const Mat<S> h = layernorm_forward<S>(x.topRows(nk), lp.ln1_g, lp.ln1_b, cache ? &ln1 : nullptr);
  Mat<S> q_in = gather_rows(h, rows);
  Mat<S> q = (q_in * lp.wq).rowwise() + lp.bq.row(0);
  Mat<S> k = (h * lp.wk).rowwise() + lp.bk.row(0);
  Mat<S> v = (h * lp.wv).rowwise() + lp.bv.row(0);
  Mat<S> ctx = Mat<S>::Zero(r, static_cast<Index>(c.d_model));
  // Attention weights per (head, chunk), each chunk rows x visible keys.
  std::vector<Mat<S>> probs;
  const Index chunks = (r + kAttentionChunk - 1) / kAttentionChunk;
  if (cache) probs.resize(static_cast<std::size_t>(nh * chunks));
  for (Index hd = 0; hd < nh; ++hd) {
    for (Index i0 = 0; i0 < r; i0 += kAttentionChunk) {
      const Index cr = std::min(kAttentionChunk, r - i0);
      const Index lim = rows[static_cast<std::size_t>(i0 + cr - 1)] + 1;
      Mat<S> sc = (q.block(i0, hd * dh, cr, dh) * k.block(0, hd * dh, lim, dh).transpose()) * scale;
      masked_softmax_rows(sc, [&](Index i) { return rows[static_cast<std::size_t>(i0 + i)] + 1; });
      ctx.block(i0, hd * dh, cr, dh) = sc * v.block(0, hd * dh, lim, dh);
      if (cache) probs[static_cast<std::size_t>(hd * chunks + i0 / kAttentionChunk)] = std::move(sc);
    }
  }
  Mat<S> z = gather_rows(x, rows) + ((ctx * lp.wo).rowwise() + lp.bo.row(0));
  LayerNormCache<S> ln2;
  Mat<S> h2 = layernorm_forward<S>(z, lp.ln2_g, lp.ln2_b, cache ? &ln2 : nullptr);
  Mat<S> u = (h2 * lp.w1).rowwise() + lp.b1.row(0);
  Mat<S> g = gelu_matrix(u);
  Mat<S> y = z + ((g * lp.w2).rowwise() + lp.b2.row(0));
  if (cache) {
    cache->rows = rows;
    cache->keys = nk;
    cache->x_in = x;
    cache->ln1 = std::move(ln1);
    cache->h = std::move(h);
    cache->q_in = std::move(q_in);
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->probs = std::move(probs);
    cache->ctx = std::move(ctx);
    cache->z = std::move(z);
    cache->ln2 = std::move(ln2);
    cache->h2 = std::move(h2);
    cache->u = std::move(u);
    cache->g = std::move(g);
  }
  return y;
}

// Returns dL/dx for the layer input (x.rows() x d).
template <class S>
Mat<S> layer_backward(const LayerParams<S>& lp, const ToyNetConfig& c, const LayerCache<S>& lc, const Mat<S>& dy,
                      LayerParams<S>& gp) {
  const auto nh = static_cast<Index>(c.heads);
  const auto dh = static_cast<Index>(c.head_dim());
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));
  const Index r = static_cast<Index>(lc.rows.size());
  const Index nk = lc.keys;

  // MLP branch.
  gp.w2 += lc.g.transpose() * dy;
  gp.b2.row(0) += dy.colwise().sum();
  const Mat<S> du = (dy * lp.w2.transpose()).cwiseProduct(gelu_grad_matrix(lc.u));
  gp.w1 += lc.h2.transpose() * du;
  gp.b1.row(0) += du.colwise().sum();
  const Mat<S> dh2 = du * lp.w1.transpose();
  const Mat<S> dz = dy + layernorm_backward<S>(dh2, lp.ln2_g, lc.ln2, gp.ln2_g, gp.ln2_b);

  Mat<S> dx = Mat<S>::Zero(lc.x_in.rows(), lc.x_in.cols());
  for (Index i = 0; i < r; ++i) dx.row(lc.rows[static_cast<std::size_t>(i)]) += dz.row(i);

  // Attention branch.
  gp.wo += lc.ctx.transpose() * dz;
  gp.bo.row(0) += dz.colwise().sum();
  const Mat<S> dctx = dz * lp.wo.transpose();
  Mat<S> dq = Mat<S>::Zero(r, lc.q.cols());
  Mat<S> dk = Mat<S>::Zero(nk, lc.k.cols());
  Mat<S> dv = Mat<S>::Zero(nk, lc.v.cols());
  const Index chunks = (r + kAttentionChunk - 1) / kAttentionChunk;
  for (Index hd = 0; hd < nh; ++hd) {
    for (Index i0 = 0; i0 < r; i0 += kAttentionChunk) {
      const Index cr = std::min(kAttentionChunk, r - i0);
      const Index lim = lc.rows[static_cast<std::size_t>(i0 + cr - 1)] + 1;
      const Mat<S>& pc = lc.probs[static_cast<std::size_t>(hd * chunks + i0 / kAttentionChunk)];
      const auto dctx_c = dctx.block(i0, hd * dh, cr, dh);
      Mat<S> dp = dctx_c * lc.v.block(0, hd * dh, lim, dh).transpose();
      const Eigen::Matrix<S, Eigen::Dynamic, 1> rowdot = dp.cwiseProduct(pc).rowwise().sum();
      dp.colwise() -= rowdot;
      const Mat<S> ds = dp.cwiseProduct(pc) * scale;
      dq.block(i0, hd * dh, cr, dh) += ds * lc.k.block(0, hd * dh, lim, dh);
      dk.block(0, hd * dh, lim, dh) += ds.transpose() * lc.q.block(i0, hd * dh, cr, dh);
      dv.block(0, hd * dh, lim, dh) += pc.transpose() * dctx_c;
    }
  }
  gp.wq += lc.q_in.transpose() * dq;
  gp.bq.row(0) += dq.colwise().sum();
  gp.wk += lc.h.transpose() * dk;
  gp.bk.row(0) += dk.colwise().sum();
  gp.wv += lc.h.transpose() * dv;
  gp.bv.row(0) += dv.colwise().sum();
  Mat<S> dh_all = dk * lp.wk.transpose() + dv * lp.wv.transpose();
  const Mat<S> dq_in = dq * lp.wq.transpose();
  for (Index i = 0; i < r; ++i) dh_all.row(lc.rows[static_cast<std::size_t>(i)]) += dq_in.row(i);
  dx.topRows(nk) += layernorm_backward<S>(dh_all, lp.ln1_g, lc.ln1, gp.ln1_g, gp.ln1_b);
  return dx;
}

// ---------------------------------------------------------------------------
// Whole-model forward / backward

template <class S>
struct ForwardCache {
  CompressorCache<S> compressor;
  std::vector<LayerCache<S>> layers;
  LayerNormCache<S> lnf;
  Mat<S> final_hidden;
  std::size_t length = 0;
};

template <class S>
struct ForwardResult {
  std::vector<Index> rows;       // positions that received logits
  std::vector<Head> heads;       // head applied at each row
  std::vector<RowVec<S>> logprobs;
};

// Positions whose head_assign names a head (the training targets).
inline std::vector<Index> predicting_rows(const SequenceLayout& layout) {
  std::vector<Index> rows;
  for (std::size_t p = 0; p < layout.head_assign.size(); ++p) {
    if (layout.head_assign[p] != Head::none) rows.push_back(static_cast<Index>(p));
  }
  return rows;
}

template <class S>
Mat<S> embed_sequence(const ToyNetParams<S>& p, const TokenSeq& tokens, const Mat<S>& slots) {
  const auto n = static_cast<Index>(tokens.size());
  if (tokens.size() > p.config.max_positions) {
    throw ContractError("sequence length " + std::to_string(tokens.size()) + " exceeds max_positions " +
                        std::to_string(p.config.max_positions));
  }
  Mat<S> x(n, static_cast<Index>(p.config.d_model));
  for (Index i = 0; i < n; ++i) {
    const TokenTag tag = tokens.tags[static_cast<std::size_t>(i)];
    const int id = tokens.ids[static_cast<std::size_t>(i)];
    if (tag == TokenTag::visual) {
      if (id < 0 || id >= slots.rows()) throw ContractError("visual slot index outside compressed frames");
      x.row(i) = slots.row(id);
    } else {
      const Mat<S>& table = p.embedding(tag);
      if (id < 0 || id >= table.rows()) {
        throw ContractError("token id " + std::to_string(id) + " outside the " + std::string(to_string(tag)) +
                            " embedding table");
      }
      x.row(i) = table.row(id);
    }
  }
  x += p.positions.topRows(n);
  return x;
}

// Log-probabilities at `rows` (default: every position with an assigned
// head), each from the head assigned there (or `heads` when supplied).
template <class S>
ForwardResult<S> forward(const ToyNetParams<S>& p, const SequenceLayout& layout, const VideoSample& sample,
                         std::vector<Index> rows = {}, std::vector<Head> heads = {},
                         ForwardCache<S>* cache = nullptr) {
  const auto& c = p.config;
  if (layout.slots_per_frame != c.slots_per_frame) throw ContractError("layout slots_per_frame differs from model");
  if (rows.empty()) rows = predicting_rows(layout);
  if (heads.empty()) {
    for (Index r : rows) heads.push_back(layout.head_assign[static_cast<std::size_t>(r)]);
  }
  if (heads.size() != rows.size()) throw ContractError("heads and rows differ in length");
  ForwardResult<S> out;
  out.rows = rows;
  out.heads = heads;
  if (rows.empty()) return out;
  for (Head h : heads) {
    if (h == Head::none) throw ContractError("logits requested at a position without a head");
  }

  const Mat<S> slots = compress_frames(p, sample.features, cache ? &cache->compressor : nullptr);
  Mat<S> x = embed_sequence(p, layout.tokens, slots);
  if (cache) {
    cache->layers.resize(c.layers);
    cache->length = layout.tokens.size();
  }
  std::vector<Index> all(static_cast<std::size_t>(rows.back() + 1));
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<Index>(i);
  for (std::size_t l = 0; l < c.layers; ++l) {
    const bool last = l + 1 == c.layers;
    x = layer_forward(p.layers[l], c, x, last ? rows : all, cache ? &cache->layers[l] : nullptr);
  }
  const Mat<S> hf = layernorm_forward<S>(x, p.lnf_g, p.lnf_b, cache ? &cache->lnf : nullptr);
  if (cache) cache->final_hidden = hf;
  out.logprobs.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const RowVec<S> logits = hf.row(static_cast<Index>(i)) * p.head_weight(heads[i]) + p.head_bias(heads[i]);
    out.logprobs[i] = log_softmax<S>(logits);
  }
  return out;
}

// Accumulates gradients given dL/dlogits at each forward row.
template <class S>
void backward(const ToyNetParams<S>& p, const SequenceLayout& layout, const ForwardResult<S>& fr,
              const ForwardCache<S>& cache, const std::vector<RowVec<S>>& dlogits, ToyNetParams<S>& grads) {
  const auto& c = p.config;
  const auto r = static_cast<Index>(fr.rows.size());
  if (r == 0) return;
  Mat<S> dhf(r, static_cast<Index>(c.d_model));
  for (Index i = 0; i < r; ++i) {
    const Head h = fr.heads[static_cast<std::size_t>(i)];
    const RowVec<S>& dl = dlogits[static_cast<std::size_t>(i)];
    grads.head_weight(h) += cache.final_hidden.row(i).transpose() * dl;
    grads.head_bias(h).row(0) += dl;
    dhf.row(i) = dl * p.head_weight(h).transpose();
  }
  Mat<S> dx = layernorm_backward<S>(dhf, p.lnf_g, cache.lnf, grads.lnf_g, grads.lnf_b);
  for (std::size_t l = c.layers; l-- > 0;) {
    dx = layer_backward(p.layers[l], c, cache.layers[l], dx, grads.layers[l]);
  }
  // dx covers positions [0, rows.back()].
  const Index n = dx.rows();
  grads.positions.topRows(n) += dx;
  const auto slots_total = static_cast<Index>(cache.compressor.attn.size() * c.slots_per_frame);
  Mat<S> dslots = Mat<S>::Zero(slots_total, static_cast<Index>(c.d_model));
  for (Index i = 0; i < n; ++i) {
    const TokenTag tag = layout.tokens.tags[static_cast<std::size_t>(i)];
    const int id = layout.tokens.ids[static_cast<std::size_t>(i)];
    if (tag == TokenTag::visual) {
      dslots.row(id) += dx.row(i);
    } else {
      grads.embedding(tag).row(id) += dx.row(i);
    }
  }
  if (slots_total > 0) compress_frames_backward(p, cache.compressor, dslots, grads);
}

// ---------------------------------------------------------------------------
// Loss

struct Example {
  const VideoSample* sample = nullptr;
  SequenceLayout layout;
};

struct ExampleNll {
  double total = 0.0;
  std::vector<std::array<double, 3>> events;  // per event: time, score, text span sums
  double end = 0.0;                           // end sentinel span
  std::vector<double> per_target;             // nll of token p + 1 predicted at p, NaN elsewhere
};

struct LossReport {
  double mean = 0.0;
  double sum = 0.0;
  std::size_t count = 0;
  std::array<double, 3> head_sum{};          // time, score, text
  std::array<std::size_t, 3> head_count{};
  std::vector<ExampleNll> examples;

  double head_mean(Head h) const {
    const auto i = static_cast<std::size_t>(h) - 1;
    return head_count[i] ? head_sum[i] / static_cast<double>(head_count[i]) : 0.0;
  }
};

// Mean cross-entropy over every loss-masked target in the batch, each
// target scored by the head assigned to its predicting position. When
// `grads` is non-null, accumulates d(mean)/d(params) into it.
template <class S>
LossReport loss(const ToyNetParams<S>& p, std::span<const Example> batch, ToyNetParams<S>* grads = nullptr) {
  if (batch.empty()) throw ContractError("empty batch");
  LossReport rep;
  std::size_t total_targets = 0;
  for (const auto& ex : batch) {
    std::size_t k = 0;
    for (std::size_t q = 0; q < ex.layout.size(); ++q) k += ex.layout.loss_mask[q];
    if (k == 0) throw ContractError("example without loss-masked positions");
    total_targets += k;
  }
  const S inv = S(1) / static_cast<S>(total_targets);
  for (const auto& ex : batch) {
    ForwardCache<S> cache;
    const auto fr = forward(p, ex.layout, *ex.sample, {}, {}, grads ? &cache : nullptr);
    ExampleNll en;
    en.per_target.assign(ex.layout.size(), std::numeric_limits<double>::quiet_NaN());
    std::vector<RowVec<S>> dlogits;
    if (grads) dlogits.resize(fr.rows.size());
    for (std::size_t i = 0; i < fr.rows.size(); ++i) {
      const auto pos = static_cast<std::size_t>(fr.rows[i]);
      const int target = ex.layout.tokens.ids[pos + 1];
      const double nll = -static_cast<double>(fr.logprobs[i](target));
      en.per_target[pos] = nll;
      en.total += nll;
      const auto hi = static_cast<std::size_t>(fr.heads[i]) - 1;
      rep.head_sum[hi] += nll;
      ++rep.head_count[hi];
      if (grads) {
        RowVec<S> d = fr.logprobs[i].array().exp();
        d(target) -= S(1);
        dlogits[i] = d * inv;
      }
    }
    for (const auto& span : ex.layout.spans) {
      double s = 0.0;
      for (std::size_t q = span.begin; q < span.end; ++q) s += en.per_target[q - 1];
      if (span.component == Component::end) {
        en.end += s;
      } else {
        if (span.event >= en.events.size()) en.events.resize(span.event + 1, {0.0, 0.0, 0.0});
        en.events[span.event][static_cast<std::size_t>(span.component)] = s;
      }
    }
    rep.sum += en.total;
    rep.count += fr.rows.size();
    rep.examples.push_back(std::move(en));
    if (grads) backward(p, ex.layout, fr, cache, dlogits, *grads);
  }
  rep.mean = rep.sum / static_cast<double>(rep.count);
  return rep;
}

// ---------------------------------------------------------------------------
// Incremental scorer for generation (per-layer key/value cache).

template <class S>
class ToyNetScorer : public NextTokenScorer {
 public:
  ToyNetScorer(const ToyNetParams<S>& params, const VideoSample& sample) : p_(params), sample_(sample) {}

  void begin(const SequenceLayout& prompt) override {
    const auto& c = p_.config;
    ForwardCache<S> cache;
    const std::vector<Index> rows = {static_cast<Index>(prompt.size()) - 1};
    const std::vector<Head> heads = {Head::time};
    (void)forward(p_, prompt, sample_, rows, heads, &cache);
    keys_.resize(c.layers);
    values_.resize(c.layers);
    const Index cap = static_cast<Index>(c.max_positions);
    for (std::size_t l = 0; l < c.layers; ++l) {
      keys_[l] = Mat<S>::Zero(cap, static_cast<Index>(c.d_model));
      values_[l] = Mat<S>::Zero(cap, static_cast<Index>(c.d_model));
      keys_[l].topRows(cache.layers[l].keys) = cache.layers[l].k;
      values_[l].topRows(cache.layers[l].keys) = cache.layers[l].v;
    }
    length_ = prompt.size();
    hidden_ = cache.final_hidden.row(0);
  }

  std::vector<double> next_scores(Head head) override {
    const RowVec<S> lp = log_softmax<S>(RowVec<S>(hidden_ * p_.head_weight(head) + p_.head_bias(head)));
    std::vector<double> out(static_cast<std::size_t>(lp.size()));
    for (Index i = 0; i < lp.size(); ++i) out[static_cast<std::size_t>(i)] = static_cast<double>(lp(i));
    return out;
  }

  void accept(TokenTag tag, int id) override {
    const auto& c = p_.config;
    if (length_ >= c.max_positions) throw ContractError("generation exceeds max_positions");
    const auto pos = static_cast<Index>(length_);
    Mat<S> x = p_.embedding(tag).row(id) + p_.positions.row(pos);
    const auto nh = static_cast<Index>(c.heads);
    const auto dh = static_cast<Index>(c.head_dim());
    const S scale = S(1) / std::sqrt(static_cast<S>(dh));
    for (std::size_t l = 0; l < c.layers; ++l) {
      const auto& lp = p_.layers[l];
      const Mat<S> h = layernorm_forward<S>(x, lp.ln1_g, lp.ln1_b, nullptr);
      const Mat<S> q = h * lp.wq + lp.bq;
      keys_[l].row(pos) = h * lp.wk + lp.bk;
      values_[l].row(pos) = h * lp.wv + lp.bv;
      Mat<S> ctx(1, static_cast<Index>(c.d_model));
      for (Index hd = 0; hd < nh; ++hd) {
        RowVec<S> sc = (q.block(0, hd * dh, 1, dh) * keys_[l].block(0, hd * dh, pos + 1, dh).transpose()) * scale;
        softmax_row_inplace<S>(sc, pos + 1);
        ctx.block(0, hd * dh, 1, dh) = sc * values_[l].block(0, hd * dh, pos + 1, dh);
      }
      const Mat<S> z = x + ctx * lp.wo + lp.bo;
      const Mat<S> h2 = layernorm_forward<S>(z, lp.ln2_g, lp.ln2_b, nullptr);
      const Mat<S> g = gelu_matrix<S>(h2 * lp.w1 + lp.b1);
      x = z + g * lp.w2 + lp.b2;
    }
    hidden_ = layernorm_forward<S>(x, p_.lnf_g, p_.lnf_b, nullptr).row(0);
    ++length_;
  }

 private:
  const ToyNetParams<S>& p_;
  const VideoSample& sample_;
  std::vector<Mat<S>> keys_, values_;
  std::size_t length_ = 0;
  RowVec<S> hidden_;
};

// ---------------------------------------------------------------------------
// Optimizer and training

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t epochs = 1;
  std::size_t batch_size = 8;
  double warmup_ratio = 0.03;
  bool cosine = true;  // false: constant after warmup
  double min_lr_ratio = 0.0;
  double grad_clip = 1.0;
  double weight_decay = 0.0;  // decoupled, matrices only
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  std::size_t log_every = 0;  // steps; 0 disables step logging
};

// Cosine schedule with linear warmup.
inline double scheduled_lr(const TrainConfig& cfg, std::size_t step, std::size_t total_steps) {
  const auto warm = static_cast<std::size_t>(cfg.warmup_ratio * static_cast<double>(total_steps));
  if (step < warm) return cfg.learning_rate * static_cast<double>(step + 1) / static_cast<double>(warm);
  if (!cfg.cosine) return cfg.learning_rate;
  const double span = static_cast<double>(std::max<std::size_t>(1, total_steps - warm));
  const double progress = std::min(1.0, static_cast<double>(step - warm) / span);
  const double floor = cfg.min_lr_ratio * cfg.learning_rate;
  return floor + (cfg.learning_rate - floor) * 0.5 * (1.0 + std::cos(M_PI * progress));
}

template <class S>
class Adam {
 public:
  Adam(const ToyNetParams<S>& like, const TrainConfig& cfg)
      : cfg_(cfg), m_(ToyNetParams<S>::zeros(like.config)), v_(ToyNetParams<S>::zeros(like.config)) {}

  void update(ToyNetParams<S>& params, const ToyNetParams<S>& grads, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    auto pt = params.tensors();
    auto gt = grads.tensors();
    auto mt = m_.tensors();
    auto vt = v_.tensors();
    const S b1 = static_cast<S>(cfg_.beta1);
    const S b2 = static_cast<S>(cfg_.beta2);
    const S step = static_cast<S>(lr / bc1);
    const S inv_bc2 = static_cast<S>(1.0 / bc2);
    const S eps = static_cast<S>(cfg_.adam_eps);
    const S decay = static_cast<S>(lr * cfg_.weight_decay);
    for (std::size_t i = 0; i < pt.size(); ++i) {
      auto& w = *pt[i].value;
      if (decay != S(0) && w.rows() > 1 && w.cols() > 1 && pt[i].name.find("ln") == std::string::npos) w *= S(1) - decay;
      const auto& g = *gt[i].value;
      auto& m = *mt[i].value;
      auto& v = *vt[i].value;
      m = b1 * m + (S(1) - b1) * g;
      v = b2 * v + (S(1) - b2) * g.cwiseProduct(g);
      w.array() -= step * m.array() / ((v.array() * inv_bc2).sqrt() + eps);
    }
  }

 private:
  TrainConfig cfg_;
  ToyNetParams<S> m_, v_;
  std::size_t t_ = 0;
};

template <class S>
double global_norm(const ToyNetParams<S>& g) {
  double s = 0.0;
  for (const auto& t : g.tensors()) s += static_cast<double>(t.value->squaredNorm());
  return std::sqrt(s);
}

template <class S>
void zero(ToyNetParams<S>& g) {
  for (auto& t : g.tensors()) t.value->setZero();
}

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  std::array<double, 3> head_loss{};
  double learning_rate = 0.0;
  std::map<std::string, double> eval;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::vector<double> step_loss;
};

template <class S>
using EpochCallback = std::function<void(std::size_t epoch, const ToyNetParams<S>&, EpochRecord&)>;

// Mini-batch Adam over `data`; deterministic for a fixed cfg.seed.
template <class S>
TrainHistory train(ToyNetParams<S>& params, std::span<const Example> data, const TrainConfig& cfg,
                   const EpochCallback<S>& on_epoch = {}, std::ostream* log = nullptr) {
  if (data.empty()) throw ContractError("empty training set");
  if (cfg.batch_size == 0 || cfg.epochs == 0 || !(cfg.learning_rate > 0)) {
    throw ContractError("invalid training config");
  }
  TrainHistory hist;
  Adam<S> opt(params, cfg);
  ToyNetParams<S> grads = ToyNetParams<S>::zeros(params.config);
  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::size_t steps_per_epoch = (data.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = steps_per_epoch * cfg.epochs;
  std::size_t step = 0;
  std::vector<Example> batch;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    EpochRecord rec;
    rec.epoch = epoch + 1;
    double epoch_sum = 0.0;
    std::size_t epoch_count = 0;
    std::array<double, 3> hs{};
    std::array<std::size_t, 3> hc{};
    for (std::size_t b = 0; b < steps_per_epoch; ++b) {
      batch.clear();
      for (std::size_t i = b * cfg.batch_size; i < std::min(data.size(), (b + 1) * cfg.batch_size); ++i) {
        batch.push_back(data[order[i]]);
      }
      zero(grads);
      const LossReport rep = loss(params, std::span<const Example>(batch), &grads);
      if (!std::isfinite(rep.mean)) {
        throw TrainingDiverged("non-finite loss at epoch " + std::to_string(epoch + 1) + " step " +
                               std::to_string(step) + " (batch starting at example " + std::to_string(order[b * cfg.batch_size]) + ")");
      }
      const double norm = global_norm(grads);
      if (!std::isfinite(norm)) throw TrainingDiverged("non-finite gradient at step " + std::to_string(step));
      if (cfg.grad_clip > 0 && norm > cfg.grad_clip) {
        const S f = static_cast<S>(cfg.grad_clip / norm);
        for (auto& t : grads.tensors()) *t.value *= f;
      }
      const double lr = scheduled_lr(cfg, step, total_steps);
      opt.update(params, grads, lr);
      rec.learning_rate = lr;
      hist.step_loss.push_back(rep.mean);
      epoch_sum += rep.sum;
      epoch_count += rep.count;
      for (std::size_t h = 0; h < 3; ++h) {
        hs[h] += rep.head_sum[h];
        hc[h] += rep.head_count[h];
      }
      ++step;
      if (log && cfg.log_every && step % cfg.log_every == 0) {
        *log << "step " << step << "/" << total_steps << " loss " << rep.mean << " lr " << lr << '\n';
      }
    }
    rec.mean_loss = epoch_sum / static_cast<double>(epoch_count);
    for (std::size_t h = 0; h < 3; ++h) rec.head_loss[h] = hc[h] ? hs[h] / static_cast<double>(hc[h]) : 0.0;
    if (on_epoch) on_epoch(epoch + 1, params, rec);
    if (log) {
      *log << "epoch " << rec.epoch << " loss " << rec.mean_loss;
      for (const auto& [k, v] : rec.eval) *log << ' ' << k << ' ' << v;
      *log << '\n';
    }
    hist.epochs.push_back(std::move(rec));
  }
  return hist;
}

// ---------------------------------------------------------------------------
// Gradient check

struct GroupCheck {
  std::string group;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::string worst;  // tensor[index] of the largest relative error
};

struct GradCheckReport {
  std::vector<GroupCheck> groups;
  double max_rel_error = 0.0;
  double loss = 0.0;
};

// Relative error |a - n| / max(|a|, |n|, floor); the floor keeps entries
// whose true gradient is ~0 from dividing round-off by round-off.
inline double relative_error(double analytic, double numeric, double floor = 1e-8) {
  return std::fabs(analytic - numeric) / std::max({std::fabs(analytic), std::fabs(numeric), floor});
}

// Analytic gradients against central differences on up to `per_group`
// randomly sampled entries of every parameter group.
inline GradCheckReport grad_check(const ToyNetParams<double>& params, std::span<const Example> batch, double epsilon,
                                  std::size_t per_group, std::uint64_t seed, double floor = 1e-8) {
  GradCheckReport rep;
  ToyNetParams<double> grads = ToyNetParams<double>::zeros(params.config);
  rep.loss = loss(params, batch, &grads).mean;
  ToyNetParams<double> probe = params;
  auto pt = probe.tensors();
  auto gt = grads.tensors();
  Rng rng(seed);
  for (const char* group : kGroups) {
    GroupCheck gc;
    gc.group = group;
    std::vector<std::pair<std::size_t, Index>> entries;
    for (std::size_t t = 0; t < pt.size(); ++t) {
      if (pt[t].group != group) continue;
      for (Index i = 0; i < pt[t].value->size(); ++i) entries.emplace_back(t, i);
    }
    rng.shuffle(entries);
    if (entries.size() > per_group) entries.resize(per_group);
    for (const auto& [t, i] : entries) {
      double& w = pt[t].value->data()[i];
      const double saved = w;
      w = saved + epsilon;
      const double up = loss(probe, batch).mean;
      w = saved - epsilon;
      const double down = loss(probe, batch).mean;
      w = saved;
      const double numeric = (up - down) / (2 * epsilon);
      const double analytic = gt[t].value->data()[i];
      const double rel = relative_error(analytic, numeric, floor);
      if (rel > gc.max_rel_error) {
        gc.max_rel_error = rel;
        gc.worst = pt[t].name + "[" + std::to_string(i) + "]";
      }
      gc.max_abs_error = std::max(gc.max_abs_error, std::fabs(analytic - numeric));
      ++gc.checked;
    }
    rep.max_rel_error = std::max(rep.max_rel_error, gc.max_rel_error);
    rep.groups.push_back(std::move(gc));
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Checkpoints: text header, then every tensor as exact hex floats.

inline constexpr const char* kCheckpointMagic = "evseq-toynet 1";

template <class S>
void save_checkpoint(std::ostream& os, const ToyNetParams<S>& p, const std::map<std::string, std::string>& meta = {}) {
  const auto& c = p.config;
  os << kCheckpointMagic << '\n';
  os << "config d_model " << c.d_model << '\n';
  os << "config layers " << c.layers << '\n';
  os << "config heads " << c.heads << '\n';
  os << "config mlp_mult " << c.mlp_mult << '\n';
  os << "config slots_per_frame " << c.slots_per_frame << '\n';
  os << "config patches " << c.patches << '\n';
  os << "config feature_dim " << c.feature_dim << '\n';
  os << "config max_positions " << c.max_positions << '\n';
  for (const auto& [k, v] : meta) os << "meta " << k << ' ' << v << '\n';
  char buf[64];
  for (const auto& t : p.tensors()) {
    const auto& m = *t.value;
    os << "tensor " << t.name << ' ' << t.group << ' ' << m.rows() << ' ' << m.cols() << '\n';
    for (Index r = 0; r < m.rows(); ++r) {
      for (Index col = 0; col < m.cols(); ++col) {
        std::snprintf(buf, sizeof buf, "%a", static_cast<double>(m(r, col)));
        if (col) os << ' ';
        os << buf;
      }
      os << '\n';
    }
  }
  os << "end\n";
}

struct CheckpointMeta {
  std::map<std::string, std::string> values;
};

template <class S>
ToyNetParams<S> load_checkpoint(std::istream& is, CheckpointMeta* meta = nullptr) {
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(is, line) || line != kCheckpointMagic) throw ParseError("not a toy-net checkpoint", line_no);
  ToyNetConfig c;
  std::map<std::string, std::size_t*> fields = {
      {"d_model", &c.d_model},   {"layers", &c.layers},         {"heads", &c.heads},
      {"mlp_mult", &c.mlp_mult}, {"slots_per_frame", &c.slots_per_frame}, {"patches", &c.patches},
      {"feature_dim", &c.feature_dim}, {"max_positions", &c.max_positions}};
  std::streampos tensors_begin = is.tellg();
  std::vector<std::string> pending;
  while (std::getline(is, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "config") {
      std::string key;
      std::size_t value = 0;
      if (!(ls >> key >> value) || !fields.count(key)) throw ParseError("bad config line", line_no);
      *fields[key] = value;
    } else if (kind == "meta") {
      std::string key, value;
      ls >> key;
      std::getline(ls >> std::ws, value);
      if (meta) meta->values[key] = value;
    } else {
      pending.push_back(line);
      break;
    }
  }
  (void)tensors_begin;
  ToyNetParams<S> p = ToyNetParams<S>::zeros(c);
  std::map<std::string, Mat<S>*> by_name;
  for (auto& t : p.tensors()) by_name[t.name] = t.value;
  std::size_t loaded = 0;
  bool done = false;
  auto next_line = [&](std::string& out) -> bool {
    if (!pending.empty()) {
      out = pending.back();
      pending.pop_back();
      return true;
    }
    if (!std::getline(is, out)) return false;
    ++line_no;
    return true;
  };
  while (next_line(line)) {
    if (line == "end") {
      done = true;
      break;
    }
    std::istringstream hs(line);
    std::string kind, name, group;
    Index rows = 0, cols = 0;
    if (!(hs >> kind >> name >> group >> rows >> cols) || kind != "tensor") throw ParseError("bad tensor header", line_no);
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ParseError("unknown tensor '" + name + "'", line_no);
    Mat<S>& m = *it->second;
    if (m.rows() != rows || m.cols() != cols) throw ParseError("shape mismatch for '" + name + "'", line_no);
    for (Index r = 0; r < rows; ++r) {
      if (!next_line(line)) throw ParseError("truncated tensor '" + name + "'", line_no);
      const char* cur = line.c_str();
      for (Index col = 0; col < cols; ++col) {
        char* end = nullptr;
        const double v = std::strtod(cur, &end);
        if (end == cur) throw ParseError("bad value in '" + name + "'", line_no);
        m(r, col) = static_cast<S>(v);
        cur = end;
      }
    }
    ++loaded;
  }
  if (!done || loaded != by_name.size()) throw ParseError("checkpoint incomplete", line_no);
  return p;
}

}  // namespace evseq::nn
