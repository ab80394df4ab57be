#include "scevo/scale_propagation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "scevo/error.hpp"
#include "scevo/parallel.hpp"
#include "scevo/rng.hpp"

namespace scevo {
namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void require_dim(Eigen::Index got, Eigen::Index want, const char* what) {
  if (got != want) {
    raise(ErrorCode::kDimensionMismatch,
          std::string(what) + ": expected dimension " + std::to_string(want) +
              ", got " + std::to_string(got));
  }
}

void require_refs(std::span<const Patch* const> refs) {
  if (refs.empty()) {
    raise(ErrorCode::kEmptyReferenceSet, "reference set is empty");
  }
}

std::vector<const Patch*> sorted_by_id(std::span<const Patch* const> refs) {
  std::vector<const Patch*> out(refs.begin(), refs.end());
  std::sort(out.begin(), out.end(),
            [](const Patch* a, const Patch* b) { return a->id < b->id; });
  return out;
}

Eigen::VectorXd project_ctx(const Eigen::VectorXd& ctx,
                            const Linear& projection) {
  if (projection.empty()) {
    require_dim(ctx.size(), kEmbeddingDim, "context feature");
    return ctx;
  }
  require_dim(ctx.size(), projection.in_dim(), "context feature");
  return projection(ctx);
}

// Values on a float grid so bundles survive an f32 round trip unchanged.
void fill_random(Eigen::MatrixXd& m, CounterRng& rng, double scale) {
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] =
        static_cast<float>(scale * rng.uniform(-1.0, 1.0));
  }
}

void fill_random(Eigen::VectorXd& v, CounterRng& rng, double scale) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    v[i] = static_cast<float>(scale * rng.uniform(-1.0, 1.0));
  }
}

void fill_random(Linear& l, CounterRng& rng) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(l.in_dim()));
  fill_random(l.weight, rng, scale);
  fill_random(l.bias, rng, 0.1 * scale);
}

void fill_random(Mlp& m, CounterRng& rng) {
  fill_random(m.first, rng);
  fill_random(m.second, rng);
}

}  // namespace

Eigen::MatrixXd Mlp::apply_columns(const Eigen::MatrixXd& x) const {
  Eigen::MatrixXd hidden = first.weight * x;
  hidden.colwise() += first.bias;
  hidden = hidden.cwiseMax(0.0);
  Eigen::MatrixXd out = second.weight * hidden;
  out.colwise() += second.bias;
  return out;
}

WeightBundle WeightBundle::zeros(const Dims& d) {
  WeightBundle w;
  const int e = kEmbeddingDim;
  w.attention.wq = Eigen::MatrixXd::Zero(d.attn_dim, d.match_dim);
  w.attention.wk = Eigen::MatrixXd::Zero(d.attn_dim, d.match_dim);
  w.attention.wv = Eigen::MatrixXd::Zero(d.attn_dim, d.match_dim);
  w.attention.lambda = 0.1;
  w.attention.pos_mlp = Mlp(3, d.pos_hidden, d.attn_dim);
  w.attention.sc_mlp = Mlp(d.attn_dim, d.sc_hidden, e);
  for (auto* m : {&w.gru.wz, &w.gru.uz, &w.gru.wr, &w.gru.ur, &w.gru.wn,
                  &w.gru.un}) {
    *m = Eigen::MatrixXd::Zero(e, e);
  }
  for (auto* b : {&w.gru.bz, &w.gru.br, &w.gru.bn, &w.gru.bhn}) {
    *b = Eigen::VectorXd::Zero(e);
  }
  w.head.mlp = Mlp(e, d.head_hidden, 4);
  w.frame_agg = Mlp(e, d.agg_hidden, e);
  return w;
}

WeightBundle WeightBundle::random(std::uint64_t seed, const Dims& dims) {
  WeightBundle w = zeros(dims);
  CounterRng rng(seed, 0x5745494748545300ULL);
  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(dims.match_dim));
  fill_random(w.attention.wq, rng, attn_scale);
  fill_random(w.attention.wk, rng, attn_scale);
  fill_random(w.attention.wv, rng, attn_scale);
  fill_random(w.attention.pos_mlp, rng);
  fill_random(w.attention.sc_mlp, rng);
  // Small recurrent weights keep the GRU contractive.
  const double gru_scale = 0.5 / std::sqrt(static_cast<double>(kEmbeddingDim));
  for (auto* m : {&w.gru.wz, &w.gru.uz, &w.gru.wr, &w.gru.ur, &w.gru.wn,
                  &w.gru.un}) {
    fill_random(*m, rng, gru_scale);
  }
  for (auto* b : {&w.gru.bz, &w.gru.br, &w.gru.bn, &w.gru.bhn}) {
    fill_random(*b, rng, 0.05);
  }
  fill_random(w.head.mlp, rng);
  w.head.mlp.second.weight *= 0.01;
  w.head.mlp.second.weight =
      w.head.mlp.second.weight.cast<float>().cast<double>();
  fill_random(w.frame_agg, rng);
  w.frame_agg.second.weight *= 0.1;
  w.frame_agg.second.weight =
      w.frame_agg.second.weight.cast<float>().cast<double>();
  return w;
}

void WeightBundle::validate() const {
  const auto& a = attention;
  const int d = a.attn_dim();
  if (d <= 0 || a.wk.rows() != d || a.wv.rows() != d ||
      a.wk.cols() != a.match_dim() || a.wv.cols() != a.match_dim()) {
    raise(ErrorCode::kDimensionMismatch, "attention projections disagree");
  }
  if (!(a.lambda >= 0.0) || !std::isfinite(a.lambda)) {
    raise(ErrorCode::kInvalidArgument, "attention lambda must be >= 0");
  }
  if (a.pos_mlp.in_dim() != 3 || a.pos_mlp.out_dim() != d ||
      a.sc_mlp.in_dim() != d || a.sc_mlp.out_dim() != kEmbeddingDim) {
    raise(ErrorCode::kDimensionMismatch, "attention perceptrons disagree");
  }
  for (const auto* m : {&gru.wz, &gru.uz, &gru.wr, &gru.ur, &gru.wn, &gru.un}) {
    if (m->rows() != kEmbeddingDim || m->cols() != kEmbeddingDim) {
      raise(ErrorCode::kDimensionMismatch, "GRU maps must be 384x384");
    }
  }
  for (const auto* b : {&gru.bz, &gru.br, &gru.bn, &gru.bhn}) {
    if (b->size() != kEmbeddingDim) {
      raise(ErrorCode::kDimensionMismatch, "GRU biases must be 384-dim");
    }
  }
  if (head.mlp.in_dim() != kEmbeddingDim || head.mlp.out_dim() != 4) {
    raise(ErrorCode::kDimensionMismatch, "coordinate head must map 384 -> 4");
  }
  if (frame_agg.in_dim() != kEmbeddingDim ||
      frame_agg.out_dim() != kEmbeddingDim) {
    raise(ErrorCode::kDimensionMismatch, "frame aggregation must be 384->384");
  }
  if (!ctx_projection.empty() && ctx_projection.out_dim() != kEmbeddingDim) {
    raise(ErrorCode::kDimensionMismatch, "context projection must emit 384");
  }
}

std::vector<double> attention_logits(const Patch& active,
                                     std::span<const Patch* const> refs,
                                     const AttentionParams& params) {
  require_refs(refs);
  require_dim(active.match_feature.size(), params.match_dim(),
              "match feature");
  const Eigen::VectorXd q = params.wq * active.match_feature;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.size()));
  std::vector<double> logits;
  logits.reserve(refs.size());
  for (const Patch* r : refs) {
    require_dim(r->match_feature.size(), params.match_dim(), "match feature");
    const Eigen::VectorXd k = params.wk * r->match_feature;
    const Vec3 delta = active.world_point - r->world_point;
    logits.push_back(q.dot(k) * inv_sqrt_d -
                     params.lambda * delta.squaredNorm());
  }
  return logits;
}

std::vector<Eigen::VectorXd> geo_values(const Patch& active,
                                        std::span<const Patch* const> refs,
                                        const AttentionParams& params) {
  require_refs(refs);
  std::vector<Eigen::VectorXd> values;
  values.reserve(refs.size());
  for (const Patch* r : refs) {
    require_dim(r->match_feature.size(), params.match_dim(), "match feature");
    const Eigen::VectorXd delta = active.world_point - r->world_point;
    values.push_back(params.wv * r->match_feature + params.pos_mlp(delta));
  }
  return values;
}

std::vector<double> attention_weights(std::span<const double> logits,
                                      AttentionNormalization norm) {
  std::vector<double> w(logits.begin(), logits.end());
  if (norm == AttentionNormalization::kRawLogits || w.empty()) return w;
  const double peak = *std::max_element(w.begin(), w.end());
  double total = 0.0;
  for (double& x : w) {
    x = std::exp(x - peak);
    total += x;
  }
  for (double& x : w) x /= total;
  return w;
}

Eigen::VectorXd spatial_correlation(const Patch& active,
                                    std::span<const Patch* const> refs,
                                    const AttentionParams& params,
                                    AttentionNormalization norm) {
  require_refs(refs);
  const auto ordered = sorted_by_id(refs);
  const auto logits = attention_logits(active, ordered, params);
  const auto weights = attention_weights(logits, norm);
  const auto values = geo_values(active, ordered, params);
  Eigen::VectorXd agg = Eigen::VectorXd::Zero(params.attn_dim());
  for (std::size_t r = 0; r < ordered.size(); ++r) {
    agg += weights[r] * values[r];
  }
  return params.sc_mlp(agg);
}

Eigen::VectorXd embedding_update(const Eigen::VectorXd& h,
                                 const Eigen::VectorXd& f_sc,
                                 const Eigen::VectorXd& f_ctx) {
  require_dim(h.size(), kEmbeddingDim, "embedding");
  require_dim(f_sc.size(), kEmbeddingDim, "spatial correlation");
  require_dim(f_ctx.size(), kEmbeddingDim, "context feature");
  return h + f_sc + f_ctx;
}

Eigen::VectorXd gru_step(const Eigen::VectorXd& h_tilde,
                         const Eigen::VectorXd& h_prev,
                         const GruParams& p) {
  require_dim(h_tilde.size(), kEmbeddingDim, "GRU input");
  require_dim(h_prev.size(), kEmbeddingDim, "GRU state");
  const Eigen::VectorXd z =
      (p.wz * h_tilde + p.uz * h_prev + p.bz).unaryExpr(&sigmoid);
  const Eigen::VectorXd r =
      (p.wr * h_tilde + p.ur * h_prev + p.br).unaryExpr(&sigmoid);
  const Eigen::VectorXd hn = p.un * h_prev + p.bhn;
  const Eigen::VectorXd n =
      (p.wn * h_tilde + p.bn + r.cwiseProduct(hn))
          .unaryExpr([](double x) { return std::tanh(x); });
  return (Eigen::VectorXd::Ones(z.size()) - z).cwiseProduct(n) +
         z.cwiseProduct(h_prev);
}

std::vector<Eigen::VectorXd> frame_aggregate(
    std::span<const Eigen::VectorXd> embeddings, const Mlp& frame_agg) {
  if (embeddings.empty()) {
    raise(ErrorCode::kEmptyFrame, "frame_aggregate: frame has no patches");
  }
  // Summation in a canonical order makes the mean permutation invariant.
  std::vector<const Eigen::VectorXd*> order;
  for (const auto& e : embeddings) {
    require_dim(e.size(), kEmbeddingDim, "embedding");
    order.push_back(&e);
  }
  std::sort(order.begin(), order.end(),
            [](const Eigen::VectorXd* a, const Eigen::VectorXd* b) {
              return std::lexicographical_compare(
                  a->data(), a->data() + a->size(), b->data(),
                  b->data() + b->size());
            });
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(kEmbeddingDim);
  for (const auto* e : order) mean += *e;
  mean /= static_cast<double>(order.size());
  const Eigen::VectorXd shared = frame_agg(mean);
  std::vector<Eigen::VectorXd> out;
  out.reserve(embeddings.size());
  for (const auto& e : embeddings) out.push_back(e + shared);
  return out;
}

CoordinatePrior decode_coordinates(const Patch& patch,
                                   const ScHeadParams& params) {
  const Eigen::VectorXd out = params.mlp(patch.embedding);
  CoordinatePrior prior;
  prior.prior = patch.world_point + out.head<3>();
  prior.weight = sigmoid(out[3]);
  return prior;
}

void propagate(PatchGraph& graph, const WeightBundle& weights,
               const CoordinateHead& head, const PropagationOptions& options) {
  const AttentionParams& attn = weights.attention;
  const std::vector<int> active_ids = graph.active_patch_ids();
  const std::size_t n = active_ids.size();
  if (n == 0) return;

  std::vector<int> ref_ids = graph.reference_set();
  std::sort(ref_ids.begin(), ref_ids.end());
  const std::size_t m = ref_ids.size();

  std::vector<Patch*> active;
  for (int id : active_ids) active.push_back(&graph.patch(id));

  // Spatial correlation, one column per active patch.
  Eigen::MatrixXd f_sc = Eigen::MatrixXd::Zero(kEmbeddingDim, n);
  if (m > 0) {
    const int d = attn.attn_dim();
    Eigen::MatrixXd act_feat(attn.match_dim(), n);
    for (std::size_t a = 0; a < n; ++a) {
      require_dim(active[a]->match_feature.size(), attn.match_dim(),
                  "match feature");
      act_feat.col(a) = active[a]->match_feature;
    }
    Eigen::MatrixXd ref_feat(attn.match_dim(), m);
    std::vector<Vec3> ref_points(m);
    for (std::size_t r = 0; r < m; ++r) {
      const Patch& p = graph.patch(ref_ids[r]);
      require_dim(p.match_feature.size(), attn.match_dim(), "match feature");
      ref_feat.col(r) = p.match_feature;
      ref_points[r] = p.world_point;
    }
    const Eigen::MatrixXd queries = attn.wq * act_feat;
    const Eigen::MatrixXd keys = attn.wk * ref_feat;
    const Eigen::MatrixXd values = attn.wv * ref_feat;
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    const Eigen::MatrixXd& w1 = attn.pos_mlp.first.weight;
    const Eigen::VectorXd& b1 = attn.pos_mlp.first.bias;
    const Eigen::Index hidden = w1.rows();

    Eigen::MatrixXd geo(d, n);
    parallel_for(n, options.threads, [&](std::size_t a) {
      const Vec3 xa = active[a]->world_point;
      std::vector<double> logits(m);
      for (std::size_t r = 0; r < m; ++r) {
        const Vec3 delta = xa - ref_points[r];
        logits[r] = queries.col(a).dot(keys.col(r)) * inv_sqrt_d -
                    attn.lambda * delta.squaredNorm();
      }
      const auto w = attention_weights(logits, options.normalization);
      // pos_mlp is affine after the ReLU, so the weighted sum of its outputs
      // is the second layer applied to the weighted sum of hidden units.
      Eigen::VectorXd agg_value = Eigen::VectorXd::Zero(d);
      Eigen::VectorXd agg_hidden = Eigen::VectorXd::Zero(hidden);
      double weight_sum = 0.0;
      for (std::size_t r = 0; r < m; ++r) {
        const Vec3 delta = xa - ref_points[r];
        agg_value += w[r] * values.col(r);
        agg_hidden += w[r] * (w1 * delta + b1).cwiseMax(0.0);
        weight_sum += w[r];
      }
      geo.col(a) = agg_value + attn.pos_mlp.second.weight * agg_hidden +
                   weight_sum * attn.pos_mlp.second.bias;
    });
    f_sc = attn.sc_mlp.apply_columns(geo);
  }

  // Fusion and recurrent update, batched over patches.
  Eigen::MatrixXd h_prev(kEmbeddingDim, n);
  Eigen::MatrixXd h_tilde(kEmbeddingDim, n);
  for (std::size_t a = 0; a < n; ++a) {
    require_dim(active[a]->embedding.size(), kEmbeddingDim, "embedding");
    h_prev.col(a) = active[a]->embedding;
    h_tilde.col(a) = active[a]->embedding + f_sc.col(a) +
                     project_ctx(active[a]->ctx_feature,
                                 weights.ctx_projection);
  }
  const GruParams& g = weights.gru;
  Eigen::MatrixXd z = g.wz * h_tilde + g.uz * h_prev;
  z.colwise() += g.bz;
  z = z.unaryExpr(&sigmoid);
  Eigen::MatrixXd r = g.wr * h_tilde + g.ur * h_prev;
  r.colwise() += g.br;
  r = r.unaryExpr(&sigmoid);
  Eigen::MatrixXd hn = g.un * h_prev;
  hn.colwise() += g.bhn;
  Eigen::MatrixXd cand = g.wn * h_tilde;
  cand.colwise() += g.bn;
  cand = (cand + r.cwiseProduct(hn)).unaryExpr([](double x) {
    return std::tanh(x);
  });
  const Eigen::MatrixXd h_new =
      (Eigen::MatrixXd::Ones(kEmbeddingDim, n) - z).cwiseProduct(cand) +
      z.cwiseProduct(h_prev);

  // Frame-level coordination.
  std::map<int, std::vector<std::size_t>> by_frame;
  for (std::size_t a = 0; a < n; ++a) by_frame[active[a]->frame_id].push_back(a);
  for (const auto& [frame, members] : by_frame) {
    std::vector<Eigen::VectorXd> emb;
    emb.reserve(members.size());
    for (std::size_t a : members) emb.push_back(h_new.col(a));
    const auto agg = frame_aggregate(emb, weights.frame_agg);
    for (std::size_t i = 0; i < members.size(); ++i) {
      active[members[i]]->embedding = agg[i];
    }
  }

  for (Patch* p : active) {
    const CoordinatePrior prior = head.decode(*p);
    p->prior = prior.prior;
    p->confidence = prior.weight;
    p->has_prior = true;
  }
}

}  // namespace scevo
