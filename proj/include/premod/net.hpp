#pragma once

// The risk network: input projection + sinusoidal positional encoding, a
// stack of post-norm Transformer encoder layers, additive-attention feature
// aggregation over time (or an optional [CLS] token), and a two-hidden-layer
// classifier ending in a sigmoid. Plus binary checkpointing.

#include <cstring>
#include <iterator>
#include <string>
#include <vector>

#include "json.hpp"

#include "premod/encoder.hpp"
#include "premod/optim.hpp"
#include "premod/tensor.hpp"

namespace premod {

struct ModelConfig {
  int d_model = 32;     // paper-scale 512
  int n_layers = 2;
  int n_heads = 4;      // paper-scale 16
  int n_agg_heads = 2;
  bool use_cls = false; // dedicated classification token instead of aggregation
  int T = 48;
  int D = 0;
  double dropout = 0.1;

  int ff_dim() const { return 4 * d_model; }
  int head_dim() const { return d_model / n_heads; }
  int agg_hidden() const { return std::max(1, d_model / 2); }
  int cls_hidden1() const { return d_model; }
  int cls_hidden2() const { return std::max(1, d_model / 2); }
  int seq_len() const { return use_cls ? T + 1 : T; }

  void validate() const {
    if (d_model <= 0 || d_model % 2 != 0)
      throw Error("ConfigError", "d_model must be positive and even");
    if (n_heads <= 0 || d_model % n_heads != 0)
      throw Error("ConfigError", "d_model must be divisible by n_heads");
    if (n_layers <= 0 || n_agg_heads < 1 || T <= 0 || D <= 0)
      throw Error("ConfigError", "layer/head/shape counts must be positive");
  }
};

// P[pos, 2i] = sin(pos / 10000^(2i/d)), P[pos, 2i+1] = cos(same).
inline ad::Tensor positional_encoding(int T, int d_model) {
  if (d_model % 2 != 0) throw Error("ConfigError", "d_model must be even");
  ad::Tensor p = ad::Tensor::zeros(static_cast<std::size_t>(T), d_model);
  for (int pos = 0; pos < T; ++pos)
    for (int i = 0; i < d_model / 2; ++i) {
      const double freq = std::pow(10000.0, -2.0 * i / static_cast<double>(d_model));
      p.at(pos, 2 * i) = std::sin(pos * freq);
      p.at(pos, 2 * i + 1) = std::cos(pos * freq);
    }
  return p;
}

struct LayerParams {
  std::vector<ad::Tensor> wq, wk, wv;  // per head, d_model x head_dim
  ad::Tensor wo, bo;                   // d_model x d_model, 1 x d_model
  ad::Tensor ln1_g, ln1_b;
  ad::Tensor ff_w1, ff_b1, ff_w2, ff_b2;
  ad::Tensor ln2_g, ln2_b;
};

struct AggHeadParams {
  ad::Tensor w1, b1;  // d_model x agg_hidden
  ad::Tensor w2, b2;  // agg_hidden x 1
};

struct ModelParams {
  ModelConfig cfg;
  ad::Tensor w_in, b_in;
  ad::Tensor cls_token;  // defined only when cfg.use_cls
  std::vector<LayerParams> layers;
  std::vector<AggHeadParams> agg;
  ad::Tensor w_ctx, b_ctx;  // (g*d_model) x d_model mixer
  ad::Tensor w_h1, b_h1, w_h2, b_h2, w_out, b_out;

  // Declared parameter order; checkpoints and the optimizer both follow it.
  std::vector<ad::Tensor> all() const {
    std::vector<ad::Tensor> v{w_in, b_in};
    if (cfg.use_cls) v.push_back(cls_token);
    for (const auto& l : layers) {
      for (const auto& t : l.wq) v.push_back(t);
      for (const auto& t : l.wk) v.push_back(t);
      for (const auto& t : l.wv) v.push_back(t);
      v.insert(v.end(), {l.wo, l.bo, l.ln1_g, l.ln1_b, l.ff_w1, l.ff_b1, l.ff_w2,
                         l.ff_b2, l.ln2_g, l.ln2_b});
    }
    if (!cfg.use_cls) {
      for (const auto& h : agg) v.insert(v.end(), {h.w1, h.b1, h.w2, h.b2});
      v.insert(v.end(), {w_ctx, b_ctx});
    }
    v.insert(v.end(), {w_h1, b_h1, w_h2, b_h2, w_out, b_out});
    return v;
  }

  void zero_grad() {
    for (auto t : all()) t.zero_grad();
  }
};

namespace detail {

inline ad::Tensor glorot(Rng& rng, int rows, int cols) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  ad::Tensor t = ad::Tensor::zeros(rows, cols, /*requires_grad=*/true);
  for (auto& v : t.data()) v = rng.uniform(-limit, limit);
  return t;
}

inline ad::Tensor zeros_param(int rows, int cols) {
  return ad::Tensor::zeros(rows, cols, /*requires_grad=*/true);
}

inline ad::Tensor ones_param(int cols) {
  ad::Tensor t = ad::Tensor::zeros(1, cols, /*requires_grad=*/true);
  for (auto& v : t.data()) v = 1.0;
  return t;
}

}  // namespace detail

inline ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(child_seed(seed, "init_params"));
  ModelParams p;
  p.cfg = cfg;
  const int d = cfg.d_model;
  p.w_in = detail::glorot(rng, cfg.D, d);
  p.b_in = detail::zeros_param(1, d);
  if (cfg.use_cls) {
    p.cls_token = ad::Tensor::zeros(1, d, true);
    for (auto& v : p.cls_token.data()) v = 0.02 * rng.normal();
  }
  for (int l = 0; l < cfg.n_layers; ++l) {
    LayerParams lp;
    for (int h = 0; h < cfg.n_heads; ++h) {
      lp.wq.push_back(detail::glorot(rng, d, cfg.head_dim()));
      lp.wk.push_back(detail::glorot(rng, d, cfg.head_dim()));
      lp.wv.push_back(detail::glorot(rng, d, cfg.head_dim()));
    }
    lp.wo = detail::glorot(rng, d, d);
    lp.bo = detail::zeros_param(1, d);
    lp.ln1_g = detail::ones_param(d);
    lp.ln1_b = detail::zeros_param(1, d);
    lp.ff_w1 = detail::glorot(rng, d, cfg.ff_dim());
    lp.ff_b1 = detail::zeros_param(1, cfg.ff_dim());
    lp.ff_w2 = detail::glorot(rng, cfg.ff_dim(), d);
    lp.ff_b2 = detail::zeros_param(1, d);
    lp.ln2_g = detail::ones_param(d);
    lp.ln2_b = detail::zeros_param(1, d);
    p.layers.push_back(std::move(lp));
  }
  if (!cfg.use_cls) {
    for (int g = 0; g < cfg.n_agg_heads; ++g) {
      AggHeadParams ap;
      ap.w1 = detail::glorot(rng, d, cfg.agg_hidden());
      ap.b1 = detail::zeros_param(1, cfg.agg_hidden());
      ap.w2 = detail::glorot(rng, cfg.agg_hidden(), 1);
      ap.b2 = detail::zeros_param(1, 1);
      p.agg.push_back(std::move(ap));
    }
    p.w_ctx = detail::glorot(rng, cfg.n_agg_heads * d, d);
    p.b_ctx = detail::zeros_param(1, d);
  }
  p.w_h1 = detail::glorot(rng, d, cfg.cls_hidden1());
  p.b_h1 = detail::zeros_param(1, cfg.cls_hidden1());
  p.w_h2 = detail::glorot(rng, cfg.cls_hidden1(), cfg.cls_hidden2());
  p.b_h2 = detail::zeros_param(1, cfg.cls_hidden2());
  p.w_out = detail::glorot(rng, cfg.cls_hidden2(), 1);
  p.b_out = detail::zeros_param(1, 1);
  return p;
}

struct ForwardOutput {
  ad::Tensor prob_t;   // 1 x 1, graph-connected
  ad::Tensor logit_t;  // 1 x 1
  double prob = 0.0;
  double logit = 0.0;
  std::vector<std::vector<double>> attention;  // g rows over T (empty in CLS mode)
};

struct ForwardCtx {
  bool training = false;
  Rng* rng = nullptr;
  double dropout = 0.0;
};

inline ad::Tensor input_tensor(const BucketMatrix& m) {
  return ad::Tensor::from(m.values, static_cast<std::size_t>(m.T), m.D());
}

// Full forward pass for a single patient matrix (T x D).
inline ForwardOutput forward(const ad::Tensor& x, const ModelParams& p,
                             const ForwardCtx& ctx = {}) {
  const ModelConfig& cfg = p.cfg;
  if (x.rows() != static_cast<std::size_t>(cfg.T) ||
      x.cols() != static_cast<std::size_t>(cfg.D))
    throw Error("ShapeMismatch", "input must be T x D");
  const bool drop = ctx.training && ctx.dropout > 0.0 && ctx.rng != nullptr;
  auto maybe_drop = [&](const ad::Tensor& t) {
    return drop ? ad::dropout(t, ctx.dropout, *ctx.rng, true) : t;
  };

  ad::Tensor z = add_rowvec(matmul(x, p.w_in), p.b_in);
  if (cfg.use_cls) z = ad::concat_rows({p.cls_token, z});
  static thread_local std::vector<std::pair<std::pair<int, int>, ad::Tensor>> pe_cache;
  ad::Tensor pe;
  for (auto& [key, t] : pe_cache)
    if (key.first == cfg.seq_len() && key.second == cfg.d_model) pe = t;
  if (!pe.defined()) {
    pe = positional_encoding(cfg.seq_len(), cfg.d_model);
    pe_cache.emplace_back(std::make_pair(cfg.seq_len(), cfg.d_model), pe);
  }
  z = add(z, pe);
  z = maybe_drop(z);

  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim()));
  for (const auto& l : p.layers) {
    std::vector<ad::Tensor> heads;
    for (int h = 0; h < cfg.n_heads; ++h) {
      ad::Tensor q = matmul(z, l.wq[h]);
      ad::Tensor k = matmul(z, l.wk[h]);
      ad::Tensor v = matmul(z, l.wv[h]);
      ad::Tensor scores = scale(matmul(q, transpose(k)), inv_sqrt_dk);
      heads.push_back(matmul(softmax_rows(scores), v));
    }
    ad::Tensor attn = add_rowvec(matmul(concat_cols(heads), l.wo), l.bo);
    z = layer_norm_rows(add(z, maybe_drop(attn)), l.ln1_g, l.ln1_b);
    ad::Tensor ff = add_rowvec(
        matmul(relu(add_rowvec(matmul(z, l.ff_w1), l.ff_b1)), l.ff_w2), l.ff_b2);
    z = layer_norm_rows(add(z, maybe_drop(ff)), l.ln2_g, l.ln2_b);
  }

  ForwardOutput out;
  ad::Tensor context;
  if (cfg.use_cls) {
    context = take_row(z, 0);
  } else {
    std::vector<ad::Tensor> ctxs;
    for (const auto& h : p.agg) {
      ad::Tensor hidden = relu(add_rowvec(matmul(z, h.w1), h.b1));
      ad::Tensor score = add_rowvec(matmul(hidden, h.w2), h.b2);  // T x 1
      ad::Tensor a = softmax_rows(transpose(score));              // 1 x T
      out.attention.push_back(a.data());
      ctxs.push_back(matmul(a, z));  // 1 x d_model
    }
    context = add_rowvec(matmul(concat_cols(ctxs), p.w_ctx), p.b_ctx);
  }
  ad::Tensor h1 = maybe_drop(relu(add_rowvec(matmul(context, p.w_h1), p.b_h1)));
  ad::Tensor h2 = maybe_drop(relu(add_rowvec(matmul(h1, p.w_h2), p.b_h2)));
  out.logit_t = add_rowvec(matmul(h2, p.w_out), p.b_out);
  out.prob_t = sigmoid(out.logit_t);
  out.logit = out.logit_t.item();
  out.prob = out.prob_t.item();
  return out;
}

inline ForwardOutput forward(const BucketMatrix& m, const ModelParams& p,
                             const ForwardCtx& ctx = {}) {
  return forward(input_tensor(m), p, ctx);
}

// Scoring helper: value-only pass, no tape.
inline double predict_prob(const BucketMatrix& m, const ModelParams& p) {
  ad::NoGradGuard ng;
  return forward(m, p).prob;
}

inline double predict_logit(const BucketMatrix& m, const ModelParams& p) {
  ad::NoGradGuard ng;
  return forward(m, p).logit;
}

// ---- checkpoint container: "PREMOD1" magic, length-prefixed JSON config
// ---- block, then raw little-endian float64 parameter blocks in declared
// ---- order. Round trips are bit-exact.

struct CheckpointMeta {
  std::uint64_t code_vocab_hash = 0;
  std::uint64_t lab_vocab_hash = 0;
  std::string optimizer = "adam(beta1=0.9,beta2=0.999,eps=1e-8)";
  double pi_src_realized = 0.0;  // training prior odds after downsampling
};

namespace detail {

inline nlohmann::json config_json(const ModelConfig& c) {
  return {{"d_model", c.d_model}, {"n_layers", c.n_layers}, {"n_heads", c.n_heads},
          {"n_agg_heads", c.n_agg_heads}, {"use_cls", c.use_cls}, {"T", c.T},
          {"D", c.D}, {"dropout", c.dropout}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.d_model = j.at("d_model");
  c.n_layers = j.at("n_layers");
  c.n_heads = j.at("n_heads");
  c.n_agg_heads = j.at("n_agg_heads");
  c.use_cls = j.at("use_cls");
  c.T = j.at("T");
  c.D = j.at("D");
  c.dropout = j.at("dropout");
  return c;
}

inline void append_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t read_u64(const std::string& in, std::size_t& off) {
  if (off + 8 > in.size()) throw Error("Corrupt", "checkpoint truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[off + i])) << (8 * i);
  off += 8;
  return v;
}

}  // namespace detail

inline std::string save_checkpoint(const ModelParams& params, const CheckpointMeta& meta) {
  nlohmann::json cfg = detail::config_json(params.cfg);
  cfg["code_vocab_hash"] = meta.code_vocab_hash;
  cfg["lab_vocab_hash"] = meta.lab_vocab_hash;
  cfg["optimizer"] = meta.optimizer;
  cfg["pi_src_realized"] = meta.pi_src_realized;
  const std::string cfg_text = cfg.dump();

  std::string out = "PREMOD1";
  detail::append_u64(out, cfg_text.size());
  out += cfg_text;
  for (const auto& t : params.all()) {
    detail::append_u64(out, t.size());
    for (double v : t.data()) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, 8);
      detail::append_u64(out, bits);
    }
  }
  return out;
}

// Loads a checkpoint; when `expect` is given, its vocabulary fingerprints
// must match the ones stored at save time.
inline std::pair<ModelParams, CheckpointMeta> load_checkpoint(
    const std::string& bytes, const EncoderConfig* expect = nullptr) {
  if (bytes.size() < 7 || bytes.compare(0, 6, "PREMOD") != 0)
    throw Error("Corrupt", "not a model checkpoint");
  if (bytes[6] != '1')
    throw Error("VersionMismatch",
                std::string("unsupported checkpoint version '") + bytes[6] + "'");
  std::size_t off = 7;
  const std::uint64_t cfg_len = detail::read_u64(bytes, off);
  if (off + cfg_len > bytes.size()) throw Error("Corrupt", "checkpoint truncated");
  nlohmann::json cfg_json;
  try {
    cfg_json = nlohmann::json::parse(bytes.substr(off, cfg_len));
  } catch (const nlohmann::json::exception&) {
    throw Error("Corrupt", "checkpoint config block is not valid JSON");
  }
  off += cfg_len;

  CheckpointMeta meta;
  meta.code_vocab_hash = cfg_json.at("code_vocab_hash");
  meta.lab_vocab_hash = cfg_json.at("lab_vocab_hash");
  meta.optimizer = cfg_json.value("optimizer", "");
  meta.pi_src_realized = cfg_json.value("pi_src_realized", 0.0);
  if (expect && (meta.code_vocab_hash != expect->code_vocab_hash() ||
                 meta.lab_vocab_hash != expect->lab_vocab_hash()))
    throw Error("VocabMismatch", "checkpoint was built against a different vocabulary");

  ModelParams params = init_params(detail::config_from_json(cfg_json), 0);
  for (auto t : params.all()) {
    const std::uint64_t n = detail::read_u64(bytes, off);
    if (n != t.size()) throw Error("Corrupt", "parameter block size mismatch");
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint64_t bits = detail::read_u64(bytes, off);
      double v;
      std::memcpy(&v, &bits, 8);
      t.data()[i] = v;
    }
  }
  if (off != bytes.size()) throw Error("Corrupt", "trailing bytes in checkpoint");
  return {std::move(params), meta};
}

inline void save_checkpoint_file(const ModelParams& params, const CheckpointMeta& meta,
                                 const std::string& path) {
  auto out = io::open_out(path);
  const std::string bytes = save_checkpoint(params, meta);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline std::pair<ModelParams, CheckpointMeta> load_checkpoint_file(
    const std::string& path, const EncoderConfig* expect = nullptr) {
  auto in = io::open_in(path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return load_checkpoint(bytes, expect);
}

}  // namespace premod
