#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "scevo/patch_graph.hpp"

namespace scevo {

/// Affine map y = W x + b.
struct Linear {
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;

  Linear() = default;
  Linear(int in_dim, int out_dim)
      : weight(Eigen::MatrixXd::Zero(out_dim, in_dim)),
        bias(Eigen::VectorXd::Zero(out_dim)) {}

  int in_dim() const { return static_cast<int>(weight.cols()); }
  int out_dim() const { return static_cast<int>(weight.rows()); }
  bool empty() const { return weight.size() == 0; }

  Eigen::VectorXd operator()(const Eigen::VectorXd& x) const {
    return weight * x + bias;
  }
};

/// Two-layer perceptron with a ReLU between the layers.
struct Mlp {
  Linear first;
  Linear second;

  Mlp() = default;
  Mlp(int in_dim, int hidden_dim, int out_dim)
      : first(in_dim, hidden_dim), second(hidden_dim, out_dim) {}

  int in_dim() const { return first.in_dim(); }
  int out_dim() const { return second.out_dim(); }

  Eigen::VectorXd operator()(const Eigen::VectorXd& x) const {
    return second(first(x).cwiseMax(0.0));
  }
  /// Column-wise application.
  Eigen::MatrixXd apply_columns(const Eigen::MatrixXd& x) const;
};

struct AttentionParams {
  Eigen::MatrixXd wq;  // d_attn x D_m
  Eigen::MatrixXd wk;
  Eigen::MatrixXd wv;
  double lambda = 0.1;  // geometric penalty, >= 0
  Mlp pos_mlp;          // 3 -> d_attn
  Mlp sc_mlp;           // d_attn -> 384

  int attn_dim() const { return static_cast<int>(wq.rows()); }
  int match_dim() const { return static_cast<int>(wq.cols()); }
};

/// Gated recurrent unit over a 384-dim state.
///   z = sig(Wz x + Uz h + bz)          r = sig(Wr x + Ur h + br)
///   n = tanh(Wn x + bn + r * (Un h + bhn))
///   h' = (1 - z) * n + z * h
struct GruParams {
  Eigen::MatrixXd wz, uz, wr, ur, wn, un;
  Eigen::VectorXd bz, br, bn, bhn;
};

/// 384 -> 4 perceptron: three coordinate increments and a raw confidence.
struct ScHeadParams {
  Mlp mlp;
};

struct WeightBundle {
  static constexpr std::uint32_t kVersion = 1;

  AttentionParams attention;
  GruParams gru;
  ScHeadParams head;
  Mlp frame_agg;        // 384 -> 384, applied to the frame mean
  Linear ctx_projection;  // empty: context features are already 384-dim

  struct Dims {
    int match_dim = kEmbeddingDim;
    int attn_dim = 64;
    int pos_hidden = 16;
    int sc_hidden = 128;
    int head_hidden = 128;
    int agg_hidden = kEmbeddingDim;
  };

  /// All-zero weights of the given shape (lambda defaults to 0.1).
  static WeightBundle zeros(const Dims& dims);
  /// Seeded initialization with values exactly representable as f32.
  static WeightBundle random(std::uint64_t seed, const Dims& dims);

  /// Throws DimensionMismatch / InvalidArgument on inconsistent shapes.
  void validate() const;
};

enum class AttentionNormalization { kSoftmax, kRawLogits };

struct CoordinatePrior {
  Vec3 prior = Vec3::Zero();
  double weight = 0.0;
};

/// Source of scene-coordinate priors for active patches.
class CoordinateHead {
 public:
  virtual ~CoordinateHead() = default;
  virtual CoordinatePrior decode(const Patch& patch) const = 0;
};

/// e_ar = <Wq f_a, Wk f_r> / sqrt(d) - lambda |X_a - X_r|^2, in `refs` order.
std::vector<double> attention_logits(const Patch& active,
                                     std::span<const Patch* const> refs,
                                     const AttentionParams& params);

/// V_r = Wv f_r + pos_mlp(X_a - X_r), in `refs` order.
std::vector<Eigen::VectorXd> geo_values(const Patch& active,
                                        std::span<const Patch* const> refs,
                                        const AttentionParams& params);

std::vector<double> attention_weights(std::span<const double> logits,
                                      AttentionNormalization norm);

/// sc_mlp(sum_r a_r V_r). References are reduced in patch-id order, so the
/// result does not depend on the order of `refs`.
Eigen::VectorXd spatial_correlation(
    const Patch& active, std::span<const Patch* const> refs,
    const AttentionParams& params,
    AttentionNormalization norm = AttentionNormalization::kSoftmax);

Eigen::VectorXd embedding_update(const Eigen::VectorXd& h,
                                 const Eigen::VectorXd& f_sc,
                                 const Eigen::VectorXd& f_ctx);

/// Input is the fused embedding, recurrent state the pre-update embedding.
/// Outputs stay in (-1, 1) whenever the state does.
Eigen::VectorXd gru_step(const Eigen::VectorXd& h_tilde,
                         const Eigen::VectorXd& h_prev,
                         const GruParams& params);

/// h_k + frame_agg(mean_k h_k); output order follows input order.
std::vector<Eigen::VectorXd> frame_aggregate(
    std::span<const Eigen::VectorXd> embeddings, const Mlp& frame_agg);

/// X_prior = world_point + dX, w = sigmoid(raw) with (dX, raw) = head(h).
CoordinatePrior decode_coordinates(const Patch& patch,
                                   const ScHeadParams& params);

class LearnedHead final : public CoordinateHead {
 public:
  explicit LearnedHead(ScHeadParams params) : params_(std::move(params)) {}
  CoordinatePrior decode(const Patch& patch) const override {
    return decode_coordinates(patch, params_);
  }

 private:
  ScHeadParams params_;
};

struct PropagationOptions {
  AttentionNormalization normalization = AttentionNormalization::kSoftmax;
  int threads = 1;
};

/// One pass of attention, fusion, GRU, frame aggregation and decoding over
/// every active patch. World points must be current. With an empty reference
/// set the spatial correlation is zero.
void propagate(PatchGraph& graph, const WeightBundle& weights,
               const CoordinateHead& head,
               const PropagationOptions& options = {});

}  // namespace scevo
