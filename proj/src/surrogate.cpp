#include "apfn/surrogate.hpp"

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace apfn::surrogate {

namespace {
constexpr double kLnEps = 1e-5;    // layernorm variance floor
constexpr double kProbFloor = 1e-12;
}  // namespace

int discretize(double y, int buckets) {
  int b = static_cast<int>(std::floor(y * buckets));
  if (b < 0) b = 0;
  if (b > buckets - 1) b = buckets - 1;
  return b;
}

double nll_loss(const PredictiveDistribution& dist, double y) {
  const int b = discretize(y, static_cast<int>(dist.probs.size()));
  return -std::log(dist.probs[b] + kProbFloor);
}

double mean_of(const PredictiveDistribution& dist) {
  const int b = static_cast<int>(dist.probs.size());
  double s = 0.0;
  for (int j = 0; j < b; ++j) s += dist.probs[j] * (j + 0.5) / b;
  return s;
}

double quantile_of(const PredictiveDistribution& dist, double q) {
  const int b = static_cast<int>(dist.probs.size());
  double cum = 0.0;
  for (int j = 0; j < b; ++j) {
    cum += dist.probs[j];
    if (cum >= q) return (j + 0.5) / b;
  }
  return (b - 0.5) / b;
}

double mass_above(const PredictiveDistribution& dist, double threshold) {
  const int b = static_cast<int>(dist.probs.size());
  double s = 0.0;
  for (int j = 0; j < b; ++j) {
    if ((j + 0.5) / b > threshold) s += dist.probs[j];
  }
  return s;
}

PredictiveDistribution uniform_distribution(int buckets) {
  PredictiveDistribution d;
  d.probs.assign(buckets, 1.0 / buckets);
  return d;
}

ModelConfig ModelConfig::paper_preset() {
  return {6, 4, 512, 1024, 1000, 2000};
}

// Full bucket resolution even at desk scale: near-optimal configs on easy
// tasks differ by ~1e-3 in normalized score, which a coarser head cannot
// represent.
ModelConfig ModelConfig::desk_preset() { return {3, 2, 128, 256, 1000, 512}; }

void ModelConfig::validate() const {
  if (layers < 1 || heads < 1 || embed_dim < 1 || hidden_dim < 1 ||
      buckets < 2 || max_context < 1) {
    throw std::invalid_argument("ModelConfig: all dimensions must be positive "
                                "and buckets >= 2");
  }
  if (embed_dim % heads != 0) {
    throw std::invalid_argument("ModelConfig: embed_dim must be divisible by "
                                "heads");
  }
}

Layout::Layout(const ModelConfig& cfg) {
  cfg.validate();
  const long d = cfg.embed_dim;
  const long h = cfg.hidden_dim;
  const long b = cfg.buckets;
  long off = 0;
  auto take = [&off](long n) {
    const long at = off;
    off += n;
    return at;
  };
  embed_w = take(kInDim * d);
  embed_b = take(d);
  layers.resize(cfg.layers);
  for (auto& l : layers) {
    l.ln1_g = take(d);
    l.ln1_b = take(d);
    l.wq = take(d * d);
    l.bq = take(d);
    l.wk = take(d * d);
    l.bk = take(d);
    l.wv = take(d * d);
    l.bv = take(d);
    l.wo = take(d * d);
    l.bo = take(d);
    l.ln2_g = take(d);
    l.ln2_b = take(d);
    l.w1 = take(d * h);
    l.b1 = take(h);
    l.w2 = take(h * d);
    l.b2 = take(d);
  }
  lnf_g = take(d);
  lnf_b = take(d);
  head_w = take(d * b);
  head_b = take(b);
  total = off;
}

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using CMap = Eigen::Map<const MatrixXd>;
using MMap = Eigen::Map<MatrixXd>;
using CVMap = Eigen::Map<const VectorXd>;
using VMap = Eigen::Map<VectorXd>;

struct LnCache {
  VectorXd rstd;   // per row
  MatrixXd xhat;   // N x d
  MatrixXd out;    // N x d
};

// y = gamma .* (x - mean) / sqrt(var + eps) + beta, per row
void layernorm_fwd(const MatrixXd& x, CVMap gamma, CVMap beta, LnCache& c) {
  const long n = x.rows(), d = x.cols();
  c.rstd.resize(n);
  c.xhat.resize(n, d);
  c.out.resize(n, d);
  for (long r = 0; r < n; ++r) {
    const double mu = x.row(r).mean();
    const double var = (x.row(r).array() - mu).square().mean();
    const double rstd = 1.0 / std::sqrt(var + kLnEps);
    c.rstd(r) = rstd;
    c.xhat.row(r) = (x.row(r).array() - mu) * rstd;
    c.out.row(r) =
        c.xhat.row(r).cwiseProduct(gamma.transpose()) + beta.transpose();
  }
}

// Returns dX; accumulates dgamma/dbeta.
MatrixXd layernorm_bwd(const MatrixXd& dy, const LnCache& c, CVMap gamma,
                       VMap dgamma, VMap dbeta) {
  const long n = dy.rows(), d = dy.cols();
  MatrixXd dx(n, d);
  for (long r = 0; r < n; ++r) {
    dgamma += dy.row(r).cwiseProduct(c.xhat.row(r)).transpose();
    dbeta += dy.row(r).transpose();
    const Eigen::RowVectorXd dxhat = dy.row(r).cwiseProduct(gamma.transpose());
    const double m1 = dxhat.mean();
    const double m2 = dxhat.cwiseProduct(c.xhat.row(r)).mean();
    dx.row(r) =
        c.rstd(r) * (dxhat.array() - m1 - c.xhat.row(r).array() * m2);
  }
  return dx;
}

struct LayerCache {
  MatrixXd h_in;                 // residual stream entering the layer
  LnCache ln1;
  MatrixXd q, k, v;              // N x d
  std::vector<MatrixXd> attn_p;  // per head, N x N
  MatrixXd att_concat;           // N x d
  MatrixXd h_mid;
  LnCache ln2;
  MatrixXd mlp_act;              // tanh activations, N x hidden
};

struct ElementCache {
  long n_ctx = 0;
  MatrixXd x_in;  // N x kInDim
  std::vector<LayerCache> layers;
  LnCache lnf;
  MatrixXd probs;  // n_q x B
  std::vector<int> target_buckets;
};

class View {
 public:
  View(const ModelConfig& cfg, const double* p, const Layout& lay)
      : cfg_(cfg), p_(p), lay_(lay) {}
  CMap mat(long off, long rows, long cols) const {
    return CMap(p_ + off, rows, cols);
  }
  CVMap vec(long off, long n) const { return CVMap(p_ + off, n); }
  const ModelConfig& cfg_;
  const double* p_;
  const Layout& lay_;
};

MatrixXd build_inputs(const std::vector<CurvePoint>& context,
                      const std::vector<CurvePoint>& queries) {
  const long n = static_cast<long>(context.size() + queries.size());
  MatrixXd x(n, Layout::kInDim);
  auto fill = [&x](long row, const CurvePoint& p, bool is_ctx) {
    if (!(p.t > 0.0 && p.t <= 1.0)) {
      throw std::out_of_range("CurvePoint: t must lie in (0,1]");
    }
    for (int i = 0; i < hpspace::kNumHps; ++i) x(row, i) = p.x.x[i];
    x(row, hpspace::kNumHps) = p.t;
    if (is_ctx) {
      if (!p.has_y || p.y < 0.0 || p.y > 1.0) {
        throw std::out_of_range("CurvePoint: context y must lie in [0,1]");
      }
      x(row, hpspace::kNumHps + 1) = p.y;
      x(row, hpspace::kNumHps + 2) = 1.0;
    } else {
      x(row, hpspace::kNumHps + 1) = 0.0;
      x(row, hpspace::kNumHps + 2) = 0.0;
    }
  };
  long r = 0;
  for (const auto& p : context) fill(r++, p, true);
  for (const auto& p : queries) fill(r++, p, false);
  return x;
}

// Full forward pass of one element; fills the cache when given.
MatrixXd forward_element(const View& w, const MatrixXd& x_in, long n_ctx,
                         ElementCache* cache) {
  const long d = w.cfg_.embed_dim;
  const long heads = w.cfg_.heads;
  const long dh = d / heads;
  const long n = x_in.rows();
  const long n_q = n - n_ctx;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  MatrixXd h = x_in * w.mat(w.lay_.embed_w, Layout::kInDim, d);
  h.rowwise() += w.vec(w.lay_.embed_b, d).transpose();

  if (cache) {
    cache->n_ctx = n_ctx;
    cache->x_in = x_in;
    cache->layers.resize(w.cfg_.layers);
  }

  LnCache ln_local;
  for (int li = 0; li < w.cfg_.layers; ++li) {
    const auto& lo = w.lay_.layers[li];
    LayerCache* lc = cache ? &cache->layers[li] : nullptr;
    if (lc) lc->h_in = h;

    LnCache& ln1 = lc ? lc->ln1 : ln_local;
    layernorm_fwd(h, w.vec(lo.ln1_g, d), w.vec(lo.ln1_b, d), ln1);
    const MatrixXd& a = ln1.out;

    MatrixXd q = a * w.mat(lo.wq, d, d);
    q.rowwise() += w.vec(lo.bq, d).transpose();
    MatrixXd k = a * w.mat(lo.wk, d, d);
    k.rowwise() += w.vec(lo.bk, d).transpose();
    MatrixXd v = a * w.mat(lo.wv, d, d);
    v.rowwise() += w.vec(lo.bv, d).transpose();

    MatrixXd att(n, d);
    std::vector<MatrixXd> probs_heads;
    if (lc) probs_heads.resize(heads);
    for (long hd = 0; hd < heads; ++hd) {
      MatrixXd s = q.middleCols(hd * dh, dh) *
                   k.middleCols(hd * dh, dh).transpose() * scale;
      // context rows/cols form a set; query i additionally sees itself
      for (long i = 0; i < n; ++i) {
        for (long j = n_ctx; j < n; ++j) {
          if (j != i) s(i, j) = -std::numeric_limits<double>::infinity();
        }
      }
      MatrixXd p(n, n);
      for (long i = 0; i < n; ++i) {
        const double mx = s.row(i).maxCoeff();
        p.row(i) = (s.row(i).array() - mx).exp();
        p.row(i) /= p.row(i).sum();
      }
      att.middleCols(hd * dh, dh).noalias() = p * v.middleCols(hd * dh, dh);
      if (lc) probs_heads[hd] = std::move(p);
    }
    MatrixXd attn_out = att * w.mat(lo.wo, d, d);
    attn_out.rowwise() += w.vec(lo.bo, d).transpose();
    if (lc) {
      lc->q = std::move(q);
      lc->k = std::move(k);
      lc->v = std::move(v);
      lc->attn_p = std::move(probs_heads);
      lc->att_concat = std::move(att);
    }
    h += attn_out;
    if (lc) lc->h_mid = h;

    LnCache& ln2 = lc ? lc->ln2 : ln_local;
    layernorm_fwd(h, w.vec(lo.ln2_g, d), w.vec(lo.ln2_b, d), ln2);
    MatrixXd z = ln2.out * w.mat(lo.w1, d, w.cfg_.hidden_dim);
    z.rowwise() += w.vec(lo.b1, w.cfg_.hidden_dim).transpose();
    z = z.array().tanh();
    MatrixXd mlp_out = z * w.mat(lo.w2, w.cfg_.hidden_dim, d);
    mlp_out.rowwise() += w.vec(lo.b2, d).transpose();
    if (lc) lc->mlp_act = std::move(z);
    h += mlp_out;
  }

  LnCache& lnf = cache ? cache->lnf : ln_local;
  layernorm_fwd(h, w.vec(w.lay_.lnf_g, d), w.vec(w.lay_.lnf_b, d), lnf);

  MatrixXd logits = lnf.out.bottomRows(n_q) *
                    w.mat(w.lay_.head_w, d, w.cfg_.buckets);
  logits.rowwise() += w.vec(w.lay_.head_b, w.cfg_.buckets).transpose();
  MatrixXd probs(n_q, w.cfg_.buckets);
  for (long r = 0; r < n_q; ++r) {
    const double mx = logits.row(r).maxCoeff();
    probs.row(r) = (logits.row(r).array() - mx).exp();
    probs.row(r) /= probs.row(r).sum();
  }
  if (cache) cache->probs = probs;
  return probs;
}

// Backward through one element; grad accumulated into grad, loss scale
// 1/total_queries is applied here.
void backward_element(const View& w, const ElementCache& c, double inv_queries,
                      VectorXd& grad) {
  const long d = w.cfg_.embed_dim;
  const long heads = w.cfg_.heads;
  const long dh = d / heads;
  const long n = c.x_in.rows();
  const long n_ctx = c.n_ctx;
  const long n_q = n - n_ctx;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  double* g = grad.data();
  auto gmat = [&](long off, long rows, long cols) {
    return MMap(g + off, rows, cols);
  };
  auto gvec = [&](long off, long nn) { return VMap(g + off, nn); };

  // head softmax + floored NLL
  MatrixXd dlogits = c.probs;
  for (long r = 0; r < n_q; ++r) {
    const int tb = c.target_buckets[r];
    const double py = c.probs(r, tb);
    const double f = py / (py + kProbFloor);
    dlogits.row(r) *= f * inv_queries;
    dlogits(r, tb) -= f * inv_queries * 1.0;
  }
  // f_query = lnf.out query rows
  gmat(w.lay_.head_w, d, w.cfg_.buckets).noalias() +=
      c.lnf.out.bottomRows(n_q).transpose() * dlogits;
  gvec(w.lay_.head_b, w.cfg_.buckets) += dlogits.colwise().sum().transpose();

  MatrixXd df = MatrixXd::Zero(n, d);
  df.bottomRows(n_q).noalias() =
      dlogits * w.mat(w.lay_.head_w, d, w.cfg_.buckets).transpose();

  MatrixXd dhad = layernorm_bwd(df, c.lnf, w.vec(w.lay_.lnf_g, d),
                                gvec(w.lay_.lnf_g, d), gvec(w.lay_.lnf_b, d));

  for (int li = w.cfg_.layers - 1; li >= 0; --li) {
    const auto& lo = w.lay_.layers[li];
    const auto& lc = c.layers[li];

    // MLP block: h_out = h_mid + tanh(ln2(h_mid) W1 + b1) W2 + b2
    const MatrixXd& m = lc.mlp_act;
    const MatrixXd& d_mlp_out = dhad;
    MatrixXd dact = d_mlp_out * w.mat(lo.w2, w.cfg_.hidden_dim, d).transpose();
    gmat(lo.w2, w.cfg_.hidden_dim, d).noalias() +=
        m.transpose() * d_mlp_out;
    gvec(lo.b2, d) += d_mlp_out.colwise().sum().transpose();
    MatrixXd dz = dact.cwiseProduct((1.0 - m.array().square()).matrix());
    MatrixXd dln2 = dz * w.mat(lo.w1, d, w.cfg_.hidden_dim).transpose();
    gmat(lo.w1, d, w.cfg_.hidden_dim).noalias() +=
        lc.ln2.out.transpose() * dz;
    gvec(lo.b1, w.cfg_.hidden_dim) += dz.colwise().sum().transpose();
    MatrixXd dh_mid = dhad + layernorm_bwd(dln2, lc.ln2, w.vec(lo.ln2_g, d),
                                           gvec(lo.ln2_g, d),
                                           gvec(lo.ln2_b, d));

    // Attention block: h_mid = h_in + concat(P_h V_h) Wo + bo
    MatrixXd datt = dh_mid * w.mat(lo.wo, d, d).transpose();
    gmat(lo.wo, d, d).noalias() += lc.att_concat.transpose() * dh_mid;
    gvec(lo.bo, d) += dh_mid.colwise().sum().transpose();

    MatrixXd dq(n, d), dk(n, d), dv(n, d);
    for (long hd = 0; hd < heads; ++hd) {
      const MatrixXd& p = lc.attn_p[hd];
      const auto vh = lc.v.middleCols(hd * dh, dh);
      const auto qh = lc.q.middleCols(hd * dh, dh);
      const auto kh = lc.k.middleCols(hd * dh, dh);
      const auto doh = datt.middleCols(hd * dh, dh);
      dv.middleCols(hd * dh, dh).noalias() = p.transpose() * doh;
      MatrixXd dp = doh * vh.transpose();
      MatrixXd ds(n, n);
      for (long i = 0; i < n; ++i) {
        const double dot = dp.row(i).cwiseProduct(p.row(i)).sum();
        ds.row(i) = p.row(i).array() * (dp.row(i).array() - dot);
      }
      dq.middleCols(hd * dh, dh).noalias() = ds * kh * scale;
      dk.middleCols(hd * dh, dh).noalias() = ds.transpose() * qh * scale;
    }
    const MatrixXd& a = lc.ln1.out;
    MatrixXd da = dq * w.mat(lo.wq, d, d).transpose() +
                  dk * w.mat(lo.wk, d, d).transpose() +
                  dv * w.mat(lo.wv, d, d).transpose();
    gmat(lo.wq, d, d).noalias() += a.transpose() * dq;
    gvec(lo.bq, d) += dq.colwise().sum().transpose();
    gmat(lo.wk, d, d).noalias() += a.transpose() * dk;
    gvec(lo.bk, d) += dk.colwise().sum().transpose();
    gmat(lo.wv, d, d).noalias() += a.transpose() * dv;
    gvec(lo.bv, d) += dv.colwise().sum().transpose();

    dhad = dh_mid + layernorm_bwd(da, lc.ln1, w.vec(lo.ln1_g, d),
                                  gvec(lo.ln1_g, d), gvec(lo.ln1_b, d));
  }

  gmat(w.lay_.embed_w, Layout::kInDim, d).noalias() +=
      c.x_in.transpose() * dhad;
  gvec(w.lay_.embed_b, d) += dhad.colwise().sum().transpose();
}

}  // namespace

ModelWeights init_model(const ModelConfig& config, std::mt19937_64& rng) {
  config.validate();
  Layout lay(config);
  ModelWeights w;
  w.config = config;
  w.params = VectorXd::Zero(lay.total);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto fill_mat = [&](long off, long rows, long cols) {
    const double s = 1.0 / std::sqrt(static_cast<double>(rows));
    for (long i = 0; i < rows * cols; ++i) w.params(off + i) = s * normal(rng);
  };
  auto fill_ones = [&](long off, long n) {
    for (long i = 0; i < n; ++i) w.params(off + i) = 1.0;
  };
  const long d = config.embed_dim;
  fill_mat(lay.embed_w, Layout::kInDim, d);
  for (const auto& lo : lay.layers) {
    fill_ones(lo.ln1_g, d);
    fill_mat(lo.wq, d, d);
    fill_mat(lo.wk, d, d);
    fill_mat(lo.wv, d, d);
    fill_mat(lo.wo, d, d);
    fill_ones(lo.ln2_g, d);
    fill_mat(lo.w1, d, config.hidden_dim);
    fill_mat(lo.w2, config.hidden_dim, d);
  }
  fill_ones(lay.lnf_g, d);
  fill_mat(lay.head_w, d, config.buckets);
  return w;
}

namespace {

void validate_element(const ModelConfig& cfg,
                      const std::vector<CurvePoint>& context,
                      const std::vector<CurvePoint>& queries) {
  if (static_cast<int>(context.size()) > cfg.max_context) {
    throw std::invalid_argument(
        "context size " + std::to_string(context.size()) +
        " exceeds max_context " + std::to_string(cfg.max_context));
  }
  if (queries.empty()) {
    throw std::invalid_argument("predict: queries must be nonempty");
  }
}

}  // namespace

std::vector<PredictiveDistribution> predict(
    const ModelWeights& weights, const std::vector<CurvePoint>& context,
    const std::vector<CurvePoint>& queries) {
  validate_element(weights.config, context, queries);
  Layout lay(weights.config);
  View v(weights.config, weights.params.data(), lay);
  const MatrixXd x = build_inputs(context, queries);
  const MatrixXd probs =
      forward_element(v, x, static_cast<long>(context.size()), nullptr);
  std::vector<PredictiveDistribution> out(queries.size());
  for (std::size_t r = 0; r < queries.size(); ++r) {
    out[r].probs.resize(weights.config.buckets);
    for (int jb = 0; jb < weights.config.buckets; ++jb) {
      out[r].probs[jb] = probs(static_cast<long>(r), jb);
    }
  }
  return out;
}

ForwardBackwardResult forward_backward(const ModelWeights& weights,
                                       const std::vector<BatchElement>& batch,
                                       bool parallel) {
  Layout lay(weights.config);
  View v(weights.config, weights.params.data(), lay);

  std::size_t total_queries = 0;
  for (const auto& el : batch) {
    validate_element(weights.config, el.context, el.queries);
    if (el.targets.size() != el.queries.size()) {
      throw std::invalid_argument("forward_backward: targets/queries mismatch");
    }
    total_queries += el.queries.size();
  }
  if (total_queries == 0) {
    throw std::invalid_argument("forward_backward: batch has no queries");
  }
  const double inv_queries = 1.0 / static_cast<double>(total_queries);

  const std::size_t ne = batch.size();
  std::vector<VectorXd> grads(ne);
  std::vector<double> losses(ne, 0.0);

  const auto run_one = [&](std::size_t i) {
    const auto& el = batch[i];
    ElementCache cache;
    const MatrixXd x = build_inputs(el.context, el.queries);
    cache.target_buckets.resize(el.targets.size());
    for (std::size_t r = 0; r < el.targets.size(); ++r) {
      cache.target_buckets[r] =
          discretize(el.targets[r], weights.config.buckets);
    }
    const MatrixXd probs =
        forward_element(v, x, static_cast<long>(el.context.size()), &cache);
    double l = 0.0;
    for (std::size_t r = 0; r < el.targets.size(); ++r) {
      l += -std::log(probs(static_cast<long>(r), cache.target_buckets[r]) +
                     kProbFloor);
    }
    losses[i] = l;
    grads[i] = VectorXd::Zero(lay.total);
    backward_element(v, cache, inv_queries, grads[i]);
  };

  if (parallel) {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(ne); ++i) {
      run_one(static_cast<std::size_t>(i));
    }
  } else {
    for (std::size_t i = 0; i < ne; ++i) run_one(i);
  }

  ForwardBackwardResult res;
  res.grad = VectorXd::Zero(lay.total);
  double loss = 0.0;
  for (std::size_t i = 0; i < ne; ++i) {  // fixed order keeps this bitwise stable
    res.grad += grads[i];
    loss += losses[i];
  }
  res.loss = loss * inv_queries;
  if (!std::isfinite(res.loss)) {
    throw std::runtime_error("forward_backward: non-finite loss");
  }
  return res;
}

double batch_loss(const ModelWeights& weights,
                  const std::vector<BatchElement>& batch) {
  Layout lay(weights.config);
  View v(weights.config, weights.params.data(), lay);
  double loss = 0.0;
  std::size_t total_queries = 0;
  for (const auto& el : batch) {
    validate_element(weights.config, el.context, el.queries);
    const MatrixXd x = build_inputs(el.context, el.queries);
    const MatrixXd probs =
        forward_element(v, x, static_cast<long>(el.context.size()), nullptr);
    for (std::size_t r = 0; r < el.targets.size(); ++r) {
      const int tb = discretize(el.targets[r], weights.config.buckets);
      loss += -std::log(probs(static_cast<long>(r), tb) + kProbFloor);
      ++total_queries;
    }
  }
  return loss / static_cast<double>(total_queries);
}

std::vector<std::vector<PredictiveDistribution>> predict_batch(
    const ModelWeights& weights, const std::vector<BatchElement>& batch,
    bool parallel) {
  std::vector<std::vector<PredictiveDistribution>> out(batch.size());
  const auto run_one = [&](std::size_t i) {
    out[i] = predict(weights, batch[i].context, batch[i].queries);
  };
  if (parallel) {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(batch.size()); ++i) {
      run_one(static_cast<std::size_t>(i));
    }
  } else {
    for (std::size_t i = 0; i < batch.size(); ++i) run_one(i);
  }
  return out;
}

namespace {
constexpr char kMagic[4] = {'A', 'P', 'F', 'N'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

void save_checkpoint(const ModelWeights& weights,
                     const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint for write: " +
                                   path.string());
  f.write(kMagic, 4);
  auto w32 = [&f](std::uint32_t v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(v));
  };
  w32(kVersion);
  w32(static_cast<std::uint32_t>(weights.config.layers));
  w32(static_cast<std::uint32_t>(weights.config.heads));
  w32(static_cast<std::uint32_t>(weights.config.embed_dim));
  w32(static_cast<std::uint32_t>(weights.config.hidden_dim));
  w32(static_cast<std::uint32_t>(weights.config.buckets));
  w32(static_cast<std::uint32_t>(weights.config.max_context));
  const std::uint64_t count = static_cast<std::uint64_t>(weights.params.size());
  f.write(reinterpret_cast<const char*>(&count), sizeof(count));
  f.write(reinterpret_cast<const char*>(weights.params.data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (!f) throw std::runtime_error("checkpoint write failed: " + path.string());
}

ModelWeights load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path.string());
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error("bad checkpoint magic in " + path.string());
  }
  auto r32 = [&f, &path]() {
    std::uint32_t v;
    f.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!f) throw std::runtime_error("truncated checkpoint: " + path.string());
    return v;
  };
  const std::uint32_t version = r32();
  if (version != kVersion) {
    throw std::runtime_error("unsupported checkpoint version " +
                             std::to_string(version) + " in " + path.string());
  }
  ModelWeights w;
  w.config.layers = static_cast<int>(r32());
  w.config.heads = static_cast<int>(r32());
  w.config.embed_dim = static_cast<int>(r32());
  w.config.hidden_dim = static_cast<int>(r32());
  w.config.buckets = static_cast<int>(r32());
  w.config.max_context = static_cast<int>(r32());
  Layout lay(w.config);
  std::uint64_t count;
  f.read(reinterpret_cast<char*>(&count), sizeof(count));
  if (!f || count != static_cast<std::uint64_t>(lay.total)) {
    throw std::runtime_error("checkpoint parameter count mismatch in " +
                             path.string());
  }
  w.params.resize(static_cast<long>(count));
  f.read(reinterpret_cast<char*>(w.params.data()),
         static_cast<std::streamsize>(count * sizeof(double)));
  if (!f) throw std::runtime_error("truncated checkpoint: " + path.string());
  return w;
}

}  // namespace apfn::surrogate
