#ifndef MESHMODES_NETWORK_H_
#define MESHMODES_NETWORK_H_

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <cstdint>
#include <functional>
#include <random>
#include <type_traits>
#include <vector>

#include "meshmodes/mesh.h"
#include "meshmodes/types.h"

namespace meshmodes {

/// Row-normalized adjacency: (M x)_i is the mean of x over the 1-ring of i.
using NeighborOp = Eigen::SparseMatrix<double, Eigen::RowMajor>;

template <typename Scalar>
struct GraphConvParamsT {
  using Mat = Eigen::Matrix<Scalar, kFeatureDim, kFeatureDim>;
  using Vec = Eigen::Matrix<Scalar, kFeatureDim, 1>;
  Mat w_point = Mat::Zero();
  Mat w_neighbor = Mat::Zero();
  Vec bias = Vec::Zero();
};
using GraphConvParams = GraphConvParamsT<double>;

/// Applies `m` to every V-row block of a batch stacked as (B*V) x 9.
template <typename Scalar>
FeatureMatrixT<Scalar> neighbor_mean(const NeighborOp& m,
                                     const FeatureMatrixT<Scalar>& x) {
  const Eigen::Index v = m.rows();
  FeatureMatrixT<Scalar> out(x.rows(), kFeatureDim);
  for (Eigen::Index start = 0; start < x.rows(); start += v) {
    if constexpr (std::is_same_v<Scalar, double>) {
      out.middleRows(start, v) = m * x.middleRows(start, v);
    } else {
      out.middleRows(start, v) = m.template cast<Scalar>() * x.middleRows(start, v);
    }
  }
  return out;
}

/// Pre-activation graph convolution y_i = Wp x_i + Wn mean_j x_j + b, given
/// the precomputed neighbor means.
template <typename Scalar>
FeatureMatrixT<Scalar> graph_conv(const GraphConvParamsT<Scalar>& p,
                                  const FeatureMatrixT<Scalar>& x,
                                  const FeatureMatrixT<Scalar>& mean_x) {
  FeatureMatrixT<Scalar> y = x * p.w_point.transpose();
  y.noalias() += mean_x * p.w_neighbor.transpose();
  y.rowwise() += p.bias.transpose();
  return y;
}

template <typename Scalar>
FeatureMatrixT<Scalar> graph_conv(const GraphConvParamsT<Scalar>& p,
                                  const FeatureMatrixT<Scalar>& x,
                                  const NeighborOp& m) {
  return graph_conv(p, x, neighbor_mean(m, x));
}

/// One autoencoder: tanh graph conv, tied linear latent layer C, tanh on the
/// decoded features, tanh graph conv.
struct AEBlock {
  GraphConvParams enc;
  GraphConvParams dec;
  /// K x (V*9). Row k reshaped (row-major) to V x 9 is component k.
  RowMatrix c;
  /// Geodesic radius below which a vertex is exempt from the sparsity term.
  double radius = 1.0;
  std::vector<int> centers;
  /// K x V, entries 0 or 1.
  RowMatrix mask;

  int latent_dim() const { return static_cast<int>(c.rows()); }
  int vertex_count() const { return static_cast<int>(c.cols()) / kFeatureDim; }
  std::size_t parameter_count() const;

  /// Visits every trainable tensor in serialization order: enc.w_point,
  /// enc.w_neighbor, enc.bias, c, dec.w_point, dec.w_neighbor, dec.bias.
  void for_each_tensor(const std::function<void(double*, std::size_t)>& fn);
  void for_each_tensor(
      const std::function<void(const double*, std::size_t)>& fn) const;
};

/// Conv weights uniform in [-0.05, 0.05], C uniform in [-0.01, 0.01], zero
/// biases, centers 0, mask all ones.
AEBlock init_block(int vertex_count, int latent_dim, double radius,
                   std::mt19937_64& rng);

/// c_k = argmax_i |C_{k,i}| (lowest index on ties); mask(k, i) = 1 iff the
/// normalized geodesic distance from c_k to i is >= radius.
void update_sparsity_mask(AEBlock& block, const GeodesicCache& geo);

/// Per-vertex group norms |C_{k,i}|, K x V.
RowMatrix group_norms(const RowMatrix& c);

struct AEForward {
  FeatureMatrix x;       ///< input, (B*V) x 9
  FeatureMatrix mean_x;
  FeatureMatrix h;       ///< tanh(enc(x))
  RowMatrix z;           ///< B x K
  FeatureMatrix hd;      ///< tanh(reshape(z C))
  FeatureMatrix mean_hd;
  FeatureMatrix y;       ///< tanh(dec(hd))
  int batch = 0;
};

AEForward ae_forward(const AEBlock& block, const FeatureMatrix& x,
                     const NeighborOp& m);

/// Decoder alone, z is B x K.
FeatureMatrix ae_decode(const AEBlock& block, const RowMatrix& z,
                        const NeighborOp& m);

struct LossWeights {
  double lambda1 = 10.0;
  double lambda2 = 1.0;
  double theta = 5.0;
};

struct LossParts {
  double recon = 0.0;       ///< (1/B) sum |X - Y|^2, unweighted
  double sparsity = 0.0;    ///< (1/K) sum Lambda_ik |C_{k,i}|, unweighted
  double nontrivial = 0.0;  ///< (1/K) sum_k max(max_b |Z_bk| - theta, 0)
  double total = 0.0;       ///< lambda1 recon + lambda2 sparsity + nontrivial
};

double reconstruction_error(const FeatureMatrix& target, const FeatureMatrix& y,
                            int batch);
double sparsity_term(const AEBlock& block);
double nontrivial_term(const RowMatrix& z, double theta);
LossParts ae_loss(const AEBlock& block, const FeatureMatrix& target,
                  const AEForward& fwd, const LossWeights& w);

/// d(lambda1 * recon)/dY.
FeatureMatrix recon_gradient(const FeatureMatrix& target, const FeatureMatrix& y,
                             int batch, double lambda1);

/// Gradients of an AEBlock's parameters; same layout as AEBlock.
struct AEGrads {
  GraphConvParams enc;
  GraphConvParams dec;
  RowMatrix c;

  explicit AEGrads(const AEBlock& like);
  void for_each_tensor(
      const std::function<void(const double*, std::size_t)>& fn) const;
};

/// Back-propagates an output gradient `dy` plus the block's own sparsity
/// and latent hinge terms. Accumulates into `grads`; writes d/dx into `dx`
/// when non-null.
void ae_backward(const AEBlock& block, const AEForward& fwd,
                 const FeatureMatrix& dy, const NeighborOp& m,
                 const LossWeights& w, AEGrads& grads, FeatureMatrix* dx);

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double decay = 0.95;
  double decay_steps = 1000.0;
};

/// ADAM with bias correction over a flat parameter vector. The learning rate
/// at step t (0-based) is lr * decay^(t / decay_steps).
class AdamState {
 public:
  AdamState() = default;
  AdamState(std::size_t size, AdamOptions options);

  /// One slice of the parameter vector with its gradient.
  struct TensorRef {
    double* param;
    const double* grad;
    std::size_t size;
  };

  void step(double* params, const double* grads);
  /// One update over tensors that together make up the parameter vector.
  void step(const std::vector<TensorRef>& tensors);
  std::int64_t steps() const { return t_; }
  double current_learning_rate() const;

 private:
  AdamOptions options_;
  Eigen::VectorXd m_;
  Eigen::VectorXd v_;
  std::int64_t t_ = 0;
};

/// ADAM update of a block in place.
void adam_step(AdamState& state, AEBlock& block, const AEGrads& grads);

/// Copies the trainable tensors of a block into one vector and back.
Eigen::VectorXd flatten(const AEBlock& block);
Eigen::VectorXd flatten(const AEGrads& grads);
void unflatten(const Eigen::VectorXd& flat, AEBlock& block);

}  // namespace meshmodes

#endif  // MESHMODES_NETWORK_H_
