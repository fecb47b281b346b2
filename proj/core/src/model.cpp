#include "tabcpt/model.hpp"

#include <cmath>

#include "tabcpt/error.hpp"
#include "tabcpt/random.hpp"

namespace tabcpt {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

using ConstMap = Eigen::Map<const Matrix>;
using MutMap = Eigen::Map<Matrix>;

std::string layer_prefix(std::size_t l) { return "layer" + std::to_string(l) + "."; }

struct LayerSlices {
  ParamSlice ln1_g, ln1_b, wq, wk, wv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
};

struct Slices {
  ParamSlice embed_w, embed_b, label;
  std::vector<LayerSlices> layers;
  ParamSlice lnf_g, lnf_b, head_w, head_b;

  explicit Slices(const ModelConfig& config) {
    const ParamLayout layout(config);
    embed_w = layout.at("embed.w");
    embed_b = layout.at("embed.b");
    label = layout.at("label.embed");
    for (std::size_t l = 0; l < config.layers; ++l) {
      const std::string p = layer_prefix(l);
      layers.push_back({layout.at(p + "ln1.g"), layout.at(p + "ln1.b"), layout.at(p + "attn.wq"),
                        layout.at(p + "attn.wk"), layout.at(p + "attn.wv"), layout.at(p + "attn.wo"),
                        layout.at(p + "attn.bo"), layout.at(p + "ln2.g"), layout.at(p + "ln2.b"),
                        layout.at(p + "ff.w1"), layout.at(p + "ff.b1"), layout.at(p + "ff.w2"),
                        layout.at(p + "ff.b2")});
    }
    lnf_g = layout.at("final.ln.g");
    lnf_b = layout.at("final.ln.b");
    head_w = layout.at("head.w");
    head_b = layout.at("head.b");
  }
};

ConstMap view(std::span<const double> params, const ParamSlice& s) {
  return ConstMap(params.data() + s.offset, static_cast<Eigen::Index>(s.rows), static_cast<Eigen::Index>(s.cols));
}

MutMap view(std::vector<double>& grad, const ParamSlice& s) {
  return MutMap(grad.data() + s.offset, static_cast<Eigen::Index>(s.rows), static_cast<Eigen::Index>(s.cols));
}

struct LayerNormCache {
  Matrix xhat;
  Vector rstd;
};

Matrix layer_norm(const Matrix& x, const ConstMap& gain, const ConstMap& bias, LayerNormCache& cache) {
  const Eigen::Index d = x.cols();
  cache.xhat.resize(x.rows(), d);
  cache.rstd.resize(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mean = x.row(i).mean();
    const double var = (x.row(i).array() - mean).square().mean();
    const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
    cache.rstd(i) = rstd;
    cache.xhat.row(i) = (x.row(i).array() - mean) * rstd;
  }
  Matrix y = cache.xhat.array().rowwise() * gain.row(0).array();
  y.rowwise() += bias.row(0);
  return y;
}

Matrix layer_norm_backward(const Matrix& dy, const LayerNormCache& cache, const ConstMap& gain, MutMap dgain,
                           MutMap dbias) {
  dgain.row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  dbias.row(0) += dy.colwise().sum();
  const Matrix dxhat = dy.array().rowwise() * gain.row(0).array();
  const auto d = static_cast<double>(dy.cols());
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const double sum = dxhat.row(i).sum();
    const double dot = dxhat.row(i).dot(cache.xhat.row(i));
    dx.row(i) = (cache.rstd(i) / d) * (d * dxhat.row(i).array() - sum - cache.xhat.row(i).array() * dot);
  }
  return dx;
}

double gelu(double z) { return 0.5 * z * (1.0 + std::tanh(kGeluC * (z + kGeluA * z * z * z))); }

double gelu_grad(double z) {
  const double t = std::tanh(kGeluC * (z + kGeluA * z * z * z));
  return 0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * z * z);
}

struct HeadCache {
  Matrix p_ctx;   // n x n_c
  Vector p_self;  // n_q
};

struct LayerTape {
  Matrix h_in;
  LayerNormCache ln1;
  Matrix a;
  Matrix q, k, v;
  std::vector<HeadCache> heads;
  Matrix o;
  Matrix h_mid;
  LayerNormCache ln2;
  Matrix b;
  Matrix z;
  Matrix g;
};

struct Tape {
  Matrix u;
  std::vector<LayerTape> layers;
  LayerNormCache lnf;
  Matrix f;
  Matrix logits;
};

// Masked attention: rows [0, n_c) see the context; query rows see the context plus themselves.
Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t n_context, std::size_t heads,
                 std::vector<HeadCache>& cache) {
  const Eigen::Index n = q.rows();
  const auto nc = static_cast<Eigen::Index>(n_context);
  const Eigen::Index nq = n - nc;
  const Eigen::Index dh = q.cols() / static_cast<Eigen::Index>(heads);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix o(n, q.cols());
  cache.assign(heads, {});
  for (std::size_t h = 0; h < heads; ++h) {
    const Eigen::Index c0 = static_cast<Eigen::Index>(h) * dh;
    const auto qh = q.middleCols(c0, dh);
    const auto kh = k.middleCols(c0, dh);
    const auto vh = v.middleCols(c0, dh);
    HeadCache& hc = cache[h];
    hc.p_ctx = (qh * kh.topRows(nc).transpose()) * scale;
    hc.p_self.resize(nq);
    for (Eigen::Index i = 0; i < n; ++i) {
      const bool is_query = i >= nc;
      double self = 0.0;
      double mx = hc.p_ctx.row(i).maxCoeff();
      if (is_query) {
        self = qh.row(i).dot(kh.row(i)) * scale;
        mx = std::max(mx, self);
      }
      hc.p_ctx.row(i) = (hc.p_ctx.row(i).array() - mx).exp();
      double total = hc.p_ctx.row(i).sum();
      if (is_query) {
        self = std::exp(self - mx);
        total += self;
      }
      hc.p_ctx.row(i) /= total;
      if (is_query) hc.p_self(i - nc) = self / total;
    }
    auto oh = o.middleCols(c0, dh);
    oh.noalias() = hc.p_ctx * vh.topRows(nc);
    for (Eigen::Index i = nc; i < n; ++i) oh.row(i) += hc.p_self(i - nc) * vh.row(i);
  }
  return o;
}

void attention_backward(const Matrix& dout, const Matrix& q, const Matrix& k, const Matrix& v, std::size_t n_context,
                        std::size_t heads, const std::vector<HeadCache>& cache, Matrix& dq, Matrix& dk, Matrix& dv) {
  const Eigen::Index n = q.rows();
  const auto nc = static_cast<Eigen::Index>(n_context);
  const Eigen::Index dh = q.cols() / static_cast<Eigen::Index>(heads);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  dq = Matrix::Zero(n, q.cols());
  dk = Matrix::Zero(n, q.cols());
  dv = Matrix::Zero(n, q.cols());
  for (std::size_t h = 0; h < heads; ++h) {
    const Eigen::Index c0 = static_cast<Eigen::Index>(h) * dh;
    const auto qh = q.middleCols(c0, dh);
    const auto kh = k.middleCols(c0, dh);
    const auto vh = v.middleCols(c0, dh);
    const auto doh = dout.middleCols(c0, dh);
    const HeadCache& hc = cache[h];

    Matrix dp = doh * vh.topRows(nc).transpose();
    dv.middleCols(c0, dh).topRows(nc).noalias() += hc.p_ctx.transpose() * doh;

    Matrix ds(n, nc);
    Vector ds_self(n - nc);
    for (Eigen::Index i = 0; i < n; ++i) {
      double dot = hc.p_ctx.row(i).dot(dp.row(i));
      double dp_self = 0.0;
      if (i >= nc) {
        dp_self = doh.row(i).dot(vh.row(i));
        dot += hc.p_self(i - nc) * dp_self;
        dv.middleCols(c0, dh).row(i) += hc.p_self(i - nc) * doh.row(i);
      }
      ds.row(i) = hc.p_ctx.row(i).array() * (dp.row(i).array() - dot);
      if (i >= nc) ds_self(i - nc) = hc.p_self(i - nc) * (dp_self - dot);
    }
    dq.middleCols(c0, dh).noalias() += (ds * kh.topRows(nc)) * scale;
    dk.middleCols(c0, dh).topRows(nc).noalias() += (ds.transpose() * qh) * scale;
    for (Eigen::Index i = nc; i < n; ++i) {
      dq.middleCols(c0, dh).row(i) += ds_self(i - nc) * scale * kh.row(i);
      dk.middleCols(c0, dh).row(i) += ds_self(i - nc) * scale * qh.row(i);
    }
  }
}

Matrix input_matrix(const ModelConfig& config, const Batch& batch) {
  const std::size_t nc = batch.n_context();
  const std::size_t nq = batch.n_query();
  const auto f = static_cast<Eigen::Index>(config.max_features);
  Matrix u = Matrix::Zero(static_cast<Eigen::Index>(nc + nq), 2 * f);
  for (std::size_t j = 0; j < batch.width(); ++j) {
    if (!batch.feature_present[j]) continue;
    const auto jj = static_cast<Eigen::Index>(j);
    for (std::size_t i = 0; i < nc; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      u(ii, jj) = batch.context_x(ii, jj);
      u(ii, f + jj) = batch.context_missing(ii, jj);
    }
    for (std::size_t i = 0; i < nq; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      u(static_cast<Eigen::Index>(nc) + ii, jj) = batch.query_x(ii, jj);
      u(static_cast<Eigen::Index>(nc) + ii, f + jj) = batch.query_missing(ii, jj);
    }
  }
  return u;
}

Tape run_forward(const ModelConfig& config, std::span<const double> params, const Batch& batch) {
  if (params.size() != ParamLayout(config).total_size()) {
    throw input_error("parameter vector length does not match the model configuration");
  }
  batch.validate(config.max_features);
  const Slices s(config);
  const std::size_t nc = batch.n_context();
  const auto nc_i = static_cast<Eigen::Index>(nc);

  Tape tape;
  tape.u = input_matrix(config, batch);
  Matrix h = tape.u * view(params, s.embed_w);
  h.rowwise() += view(params, s.embed_b).row(0);
  const ConstMap label = view(params, s.label);
  for (std::size_t i = 0; i < nc; ++i) h.row(static_cast<Eigen::Index>(i)) += label.row(batch.context_y[i]);

  tape.layers.resize(config.layers);
  for (std::size_t l = 0; l < config.layers; ++l) {
    const LayerSlices& ls = s.layers[l];
    LayerTape& t = tape.layers[l];
    t.h_in = h;
    t.a = layer_norm(h, view(params, ls.ln1_g), view(params, ls.ln1_b), t.ln1);
    t.q = t.a * view(params, ls.wq);
    t.k = t.a * view(params, ls.wk);
    t.v = t.a * view(params, ls.wv);
    t.o = attention(t.q, t.k, t.v, nc, config.heads, t.heads);
    h.noalias() += t.o * view(params, ls.wo);
    h.rowwise() += view(params, ls.bo).row(0);
    t.h_mid = h;
    t.b = layer_norm(h, view(params, ls.ln2_g), view(params, ls.ln2_b), t.ln2);
    t.z = t.b * view(params, ls.w1);
    t.z.rowwise() += view(params, ls.b1).row(0);
    t.g = t.z.unaryExpr([](double x) { return gelu(x); });
    h.noalias() += t.g * view(params, ls.w2);
    h.rowwise() += view(params, ls.b2).row(0);
  }
  const Matrix hq = h.bottomRows(h.rows() - nc_i);
  tape.f = layer_norm(hq, view(params, s.lnf_g), view(params, s.lnf_b), tape.lnf);
  tape.logits = tape.f * view(params, s.head_w);
  tape.logits.rowwise() += view(params, s.head_b).row(0);
  return tape;
}

std::vector<double> run_backward(const ModelConfig& config, std::span<const double> params, const Batch& batch,
                                 const Tape& tape, const Matrix& dlogits) {
  const Slices s(config);
  const std::size_t nc = batch.n_context();
  const auto nc_i = static_cast<Eigen::Index>(nc);
  std::vector<double> grad(params.size(), 0.0);

  view(grad, s.head_w).noalias() += tape.f.transpose() * dlogits;
  view(grad, s.head_b).row(0) += dlogits.colwise().sum();
  const Matrix df = dlogits * view(params, s.head_w).transpose();
  const Matrix dhq = layer_norm_backward(df, tape.lnf, view(params, s.lnf_g), view(grad, s.lnf_g), view(grad, s.lnf_b));

  const Eigen::Index n = tape.u.rows();
  Matrix dh = Matrix::Zero(n, static_cast<Eigen::Index>(config.embed_dim));
  dh.bottomRows(n - nc_i) = dhq;

  for (std::size_t l = config.layers; l-- > 0;) {
    const LayerSlices& ls = s.layers[l];
    const LayerTape& t = tape.layers[l];

    // feed-forward branch
    view(grad, ls.w2).noalias() += t.g.transpose() * dh;
    view(grad, ls.b2).row(0) += dh.colwise().sum();
    Matrix dz = dh * view(params, ls.w2).transpose();
    dz.array() *= t.z.unaryExpr([](double x) { return gelu_grad(x); }).array();
    view(grad, ls.w1).noalias() += t.b.transpose() * dz;
    view(grad, ls.b1).row(0) += dz.colwise().sum();
    const Matrix db = dz * view(params, ls.w1).transpose();
    dh += layer_norm_backward(db, t.ln2, view(params, ls.ln2_g), view(grad, ls.ln2_g), view(grad, ls.ln2_b));

    // attention branch
    view(grad, ls.wo).noalias() += t.o.transpose() * dh;
    view(grad, ls.bo).row(0) += dh.colwise().sum();
    const Matrix dout = dh * view(params, ls.wo).transpose();
    Matrix dq, dk, dv;
    attention_backward(dout, t.q, t.k, t.v, nc, config.heads, t.heads, dq, dk, dv);
    view(grad, ls.wq).noalias() += t.a.transpose() * dq;
    view(grad, ls.wk).noalias() += t.a.transpose() * dk;
    view(grad, ls.wv).noalias() += t.a.transpose() * dv;
    Matrix da = dq * view(params, ls.wq).transpose();
    da.noalias() += dk * view(params, ls.wk).transpose();
    da.noalias() += dv * view(params, ls.wv).transpose();
    dh += layer_norm_backward(da, t.ln1, view(params, ls.ln1_g), view(grad, ls.ln1_g), view(grad, ls.ln1_b));
  }

  view(grad, s.embed_w).noalias() += tape.u.transpose() * dh;
  view(grad, s.embed_b).row(0) += dh.colwise().sum();
  MutMap dlabel = view(grad, s.label);
  for (std::size_t i = 0; i < nc; ++i) dlabel.row(batch.context_y[i]) += dh.row(static_cast<Eigen::Index>(i));
  return grad;
}

}  // namespace

void ModelConfig::validate() const {
  if (max_features < 1 || embed_dim < 1 || layers < 1 || heads < 1 || ff_dim < 1) {
    throw config_error("model dimensions must all be at least 1");
  }
  if (embed_dim % heads != 0) throw config_error("embed_dim must be divisible by heads");
  if (n_classes_out != kMaxClasses) throw config_error("the classifier head is fixed at 10 classes");
}

ParamLayout::ParamLayout(const ModelConfig& config) {
  config.validate();
  const std::size_t d = config.embed_dim;
  add("embed.w", 2 * config.max_features, d);
  add("embed.b", 1, d);
  add("label.embed", config.n_classes_out, d);
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string p = layer_prefix(l);
    add(p + "ln1.g", 1, d);
    add(p + "ln1.b", 1, d);
    add(p + "attn.wq", d, d);
    add(p + "attn.wk", d, d);
    add(p + "attn.wv", d, d);
    add(p + "attn.wo", d, d);
    add(p + "attn.bo", 1, d);
    add(p + "ln2.g", 1, d);
    add(p + "ln2.b", 1, d);
    add(p + "ff.w1", d, config.ff_dim);
    add(p + "ff.b1", 1, config.ff_dim);
    add(p + "ff.w2", config.ff_dim, d);
    add(p + "ff.b2", 1, d);
  }
  add("final.ln.g", 1, d);
  add("final.ln.b", 1, d);
  add("head.w", d, config.n_classes_out);
  add("head.b", 1, config.n_classes_out);
}

void ParamLayout::add(std::string name, std::size_t rows, std::size_t cols) {
  index_.emplace(name, slices_.size());
  slices_.push_back({std::move(name), total_, rows, cols});
  total_ += rows * cols;
}

const ParamSlice& ParamLayout::at(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw internal_error("no parameter named '" + name + "'");
  return slices_[it->second];
}

NamedParams unflatten(const ParamLayout& layout, std::span<const double> flat) {
  if (flat.size() != layout.total_size()) throw input_error("flat parameter length does not match the layout");
  NamedParams named;
  for (const auto& slice : layout.slices()) named.emplace(slice.name, view(flat, slice));
  return named;
}

std::vector<double> flatten(const ParamLayout& layout, const NamedParams& named) {
  std::vector<double> flat(layout.total_size(), 0.0);
  for (const auto& slice : layout.slices()) {
    const auto it = named.find(slice.name);
    if (it == named.end()) throw input_error("missing parameter '" + slice.name + "'");
    if (static_cast<std::size_t>(it->second.rows()) != slice.rows ||
        static_cast<std::size_t>(it->second.cols()) != slice.cols) {
      throw input_error("parameter '" + slice.name + "' has the wrong shape");
    }
    view(flat, slice) = it->second;
  }
  return flat;
}

std::vector<double> init_params(const ModelConfig& config, std::uint64_t seed) {
  const ParamLayout layout(config);
  std::vector<double> params(layout.total_size(), 0.0);
  Rng rng(seed);
  for (const auto& slice : layout.slices()) {
    const bool gain = slice.name.ends_with(".g");
    const bool bias = slice.rows == 1 && !gain;
    auto block = view(params, slice);
    if (gain) {
      block.setOnes();
    } else if (bias) {
      block.setZero();
    } else {
      const double stddev = slice.name == "label.embed" ? 1.0 : 1.0 / std::sqrt(static_cast<double>(slice.rows));
      for (Eigen::Index i = 0; i < block.size(); ++i) block.data()[i] = rng.normal(0.0, stddev);
    }
  }
  return params;
}

void Batch::validate(std::size_t max_features) const {
  if (n_context() < 1 || n_query() < 1) throw input_error("batch needs at least one context and one query row");
  if (width() > max_features) {
    throw input_error("batch has " + std::to_string(width()) + " features, model accepts at most " +
                      std::to_string(max_features));
  }
  const auto w = static_cast<Eigen::Index>(width());
  if (context_x.rows() != static_cast<Eigen::Index>(n_context()) || context_x.cols() != w ||
      context_missing.rows() != context_x.rows() || context_missing.cols() != w || query_x.cols() != w ||
      query_missing.rows() != query_x.rows() || query_missing.cols() != w) {
    throw input_error("batch blocks have inconsistent shapes");
  }
  if (!query_y.empty() && query_y.size() != n_query()) throw input_error("query label count mismatch");
  auto check = [](int y) {
    if (y < 0 || y >= static_cast<int>(kMaxClasses)) throw input_error("class label outside [0, 10)");
  };
  for (int y : context_y) check(y);
  for (int y : query_y) check(y);
}

Batch make_batch(const FeatureBlock& context, std::span<const int> context_y, const FeatureBlock& query,
                 std::span<const int> query_y, std::size_t max_features) {
  const auto width = static_cast<std::size_t>(context.values.cols());
  if (width > max_features) {
    throw input_error("dataset has " + std::to_string(width) + " features, model accepts at most " +
                      std::to_string(max_features));
  }
  const auto f = static_cast<Eigen::Index>(max_features);
  const auto w = static_cast<Eigen::Index>(width);
  Batch batch;
  batch.context_x = Matrix::Zero(context.values.rows(), f);
  batch.context_missing = Matrix::Zero(context.values.rows(), f);
  batch.query_x = Matrix::Zero(query.values.rows(), f);
  batch.query_missing = Matrix::Zero(query.values.rows(), f);
  batch.context_x.leftCols(w) = context.values;
  batch.context_missing.leftCols(w) = context.missing;
  batch.query_x.leftCols(w) = query.values;
  batch.query_missing.leftCols(w) = query.missing;
  batch.context_y.assign(context_y.begin(), context_y.end());
  batch.query_y.assign(query_y.begin(), query_y.end());
  batch.feature_present.assign(max_features, 0);
  std::fill(batch.feature_present.begin(), batch.feature_present.begin() + static_cast<std::ptrdiff_t>(width), 1);
  return batch;
}

Matrix forward(const ModelConfig& config, std::span<const double> params, const Batch& batch) {
  return run_forward(config, params, batch).logits;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    p.row(i) = (logits.row(i).array() - mx).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

Matrix predict_proba(const ModelConfig& config, std::span<const double> params, const Batch& batch) {
  return softmax_rows(forward(config, params, batch));
}

double loss_ce(const Matrix& logits, std::span<const int> labels) {
  if (static_cast<std::size_t>(logits.rows()) != labels.size() || labels.empty()) {
    throw input_error("cross-entropy needs one label per logit row");
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    const double lse = mx + std::log((logits.row(i).array() - mx).exp().sum());
    total += lse - logits(i, labels[static_cast<std::size_t>(i)]);
  }
  return total / static_cast<double>(labels.size());
}

LossGradient gradient(const ModelConfig& config, std::span<const double> params, const Batch& batch) {
  if (batch.query_y.size() != batch.n_query()) throw input_error("gradient needs query labels");
  const Tape tape = run_forward(config, params, batch);
  Matrix dlogits = softmax_rows(tape.logits);
  for (std::size_t i = 0; i < batch.query_y.size(); ++i) dlogits(static_cast<Eigen::Index>(i), batch.query_y[i]) -= 1.0;
  dlogits /= static_cast<double>(batch.query_y.size());
  return {loss_ce(tape.logits, batch.query_y), run_backward(config, params, batch, tape, dlogits)};
}

std::vector<double> backward_from_logits(const ModelConfig& config, std::span<const double> params,
                                         const Batch& batch, const Matrix& dlogits) {
  const Tape tape = run_forward(config, params, batch);
  if (dlogits.rows() != tape.logits.rows() || dlogits.cols() != tape.logits.cols()) {
    throw input_error("upstream gradient has the wrong shape");
  }
  return run_backward(config, params, batch, tape, dlogits);
}

}  // namespace tabcpt
