#include "meshmodes/network.h"

#include <cmath>

namespace meshmodes {

namespace {

using ConstFlat = Eigen::Map<const RowMatrix>;
using Flat = Eigen::Map<RowMatrix>;

ConstFlat as_flat(const FeatureMatrix& f, int batch) {
  return ConstFlat(f.data(), batch, f.rows() / batch * kFeatureDim);
}

// Vectorized tanh: (1 - e) / (1 + e) with e = exp(-2|x|), and a short odd
// series near zero where that quotient cancels. Max error ~1e-16 absolute.
FeatureMatrix tanh_of(const FeatureMatrix& a) {
  const auto x = a.array();
  const auto mag = x.abs();
  const auto e = (-2.0 * mag).exp();
  const auto x2 = x.square();
  const auto series = x * (1.0 - x2 * (1.0 / 3.0 - x2 * (2.0 / 15.0 - x2 * (17.0 / 315.0))));
  return (mag < 0.01).select(series, x.sign() * (1.0 - e) / (1.0 + e)).matrix();
}

// dA = dOut * (1 - tanh^2) given the activation output.
FeatureMatrix through_tanh(const FeatureMatrix& d_out, const FeatureMatrix& out) {
  return (d_out.array() * (1.0 - out.array().square())).matrix();
}

void accumulate_conv(GraphConvParams& g, const FeatureMatrix& d_pre,
                     const FeatureMatrix& x, const FeatureMatrix& mean_x) {
  g.w_point.noalias() += d_pre.transpose() * x;
  g.w_neighbor.noalias() += d_pre.transpose() * mean_x;
  g.bias += d_pre.colwise().sum().transpose();
}

// Gradient w.r.t. the conv input: dA Wp + M^T (dA Wn), per shape block.
FeatureMatrix conv_input_gradient(const GraphConvParams& p,
                                  const FeatureMatrix& d_pre,
                                  const NeighborOp& m) {
  FeatureMatrix out = d_pre * p.w_point;
  const FeatureMatrix through_neighbors = d_pre * p.w_neighbor;
  const Eigen::Index v = m.rows();
  for (Eigen::Index start = 0; start < d_pre.rows(); start += v) {
    out.middleRows(start, v).noalias() +=
        m.transpose() * through_neighbors.middleRows(start, v);
  }
  return out;
}

template <typename Block, typename Fn>
void visit(Block& b, const Fn& fn) {
  fn(b.enc.w_point.data(), static_cast<std::size_t>(b.enc.w_point.size()));
  fn(b.enc.w_neighbor.data(), static_cast<std::size_t>(b.enc.w_neighbor.size()));
  fn(b.enc.bias.data(), static_cast<std::size_t>(b.enc.bias.size()));
  fn(b.c.data(), static_cast<std::size_t>(b.c.size()));
  fn(b.dec.w_point.data(), static_cast<std::size_t>(b.dec.w_point.size()));
  fn(b.dec.w_neighbor.data(), static_cast<std::size_t>(b.dec.w_neighbor.size()));
  fn(b.dec.bias.data(), static_cast<std::size_t>(b.dec.bias.size()));
}

}  // namespace

std::size_t AEBlock::parameter_count() const {
  std::size_t n = 0;
  for_each_tensor([&](const double*, std::size_t size) { n += size; });
  return n;
}

void AEBlock::for_each_tensor(
    const std::function<void(double*, std::size_t)>& fn) {
  visit(*this, fn);
}

void AEBlock::for_each_tensor(
    const std::function<void(const double*, std::size_t)>& fn) const {
  visit(*this, fn);
}

AEGrads::AEGrads(const AEBlock& like)
    : c(RowMatrix::Zero(like.c.rows(), like.c.cols())) {}

void AEGrads::for_each_tensor(
    const std::function<void(const double*, std::size_t)>& fn) const {
  visit(*this, fn);
}

AEBlock init_block(int vertex_count, int latent_dim, double radius,
                   std::mt19937_64& rng) {
  if (vertex_count < 1 || latent_dim < 1) {
    throw UsageError("autoencoder needs at least one vertex and one latent");
  }
  std::uniform_real_distribution<double> conv(-0.05, 0.05);
  std::uniform_real_distribution<double> fc(-0.01, 0.01);
  auto fill = [&](auto& mat, auto& dist) {
    for (Eigen::Index i = 0; i < mat.size(); ++i) mat.data()[i] = dist(rng);
  };
  AEBlock b;
  fill(b.enc.w_point, conv);
  fill(b.enc.w_neighbor, conv);
  b.c.resize(latent_dim, static_cast<Eigen::Index>(vertex_count) * kFeatureDim);
  fill(b.c, fc);
  fill(b.dec.w_point, conv);
  fill(b.dec.w_neighbor, conv);
  b.radius = radius;
  b.centers.assign(latent_dim, 0);
  b.mask = RowMatrix::Ones(latent_dim, vertex_count);
  return b;
}

RowMatrix group_norms(const RowMatrix& c) {
  const Eigen::Index v = c.cols() / kFeatureDim;
  RowMatrix out(c.rows(), v);
  for (Eigen::Index k = 0; k < c.rows(); ++k) {
    for (Eigen::Index i = 0; i < v; ++i) {
      out(k, i) = c.row(k).segment(i * kFeatureDim, kFeatureDim).norm();
    }
  }
  return out;
}

void update_sparsity_mask(AEBlock& block, const GeodesicCache& geo) {
  const int k_count = block.latent_dim();
  const int v = block.vertex_count();
  if (geo.vertex_count() != v) {
    throw UsageError("geodesic provider does not match the block");
  }
  const RowMatrix norms = group_norms(block.c);
  block.centers.resize(k_count);
  block.mask.resize(k_count, v);
  for (int k = 0; k < k_count; ++k) {
    int best = 0;
    for (int i = 1; i < v; ++i) {
      if (norms(k, i) > norms(k, best)) best = i;
    }
    block.centers[k] = best;
    const Eigen::VectorXd& dist = geo.from(best);
    for (int i = 0; i < v; ++i) {
      block.mask(k, i) = dist[i] >= block.radius ? 1.0 : 0.0;
    }
  }
}

AEForward ae_forward(const AEBlock& block, const FeatureMatrix& x,
                     const NeighborOp& m) {
  const int v = block.vertex_count();
  if (x.rows() == 0 || x.rows() % v != 0 || m.rows() != v) {
    throw UsageError("input rows are not a multiple of the vertex count");
  }
  AEForward f;
  f.batch = static_cast<int>(x.rows() / v);
  f.x = x;
  f.mean_x = neighbor_mean(m, x);
  f.h = tanh_of(graph_conv(block.enc, x, f.mean_x));
  f.z = as_flat(f.h, f.batch) * block.c.transpose();
  f.hd.resize(x.rows(), kFeatureDim);
  Flat(f.hd.data(), f.batch, block.c.cols()) = f.z * block.c;
  f.hd = tanh_of(f.hd);
  f.mean_hd = neighbor_mean(m, f.hd);
  f.y = tanh_of(graph_conv(block.dec, f.hd, f.mean_hd));
  return f;
}

FeatureMatrix ae_decode(const AEBlock& block, const RowMatrix& z,
                        const NeighborOp& m) {
  if (z.cols() != block.latent_dim()) {
    throw UsageError("latent size does not match the block");
  }
  FeatureMatrix hd(z.rows() * block.vertex_count(), kFeatureDim);
  Flat(hd.data(), z.rows(), block.c.cols()) = z * block.c;
  hd = tanh_of(hd);
  return tanh_of(graph_conv(block.dec, hd, m));
}

double reconstruction_error(const FeatureMatrix& target, const FeatureMatrix& y,
                            int batch) {
  return (target - y).squaredNorm() / batch;
}

double sparsity_term(const AEBlock& block) {
  return block.mask.cwiseProduct(group_norms(block.c)).sum() /
         block.latent_dim();
}

double nontrivial_term(const RowMatrix& z, double theta) {
  double sum = 0.0;
  for (Eigen::Index k = 0; k < z.cols(); ++k) {
    sum += std::max(z.col(k).cwiseAbs().maxCoeff() - theta, 0.0);
  }
  return sum / static_cast<double>(z.cols());
}

LossParts ae_loss(const AEBlock& block, const FeatureMatrix& target,
                  const AEForward& fwd, const LossWeights& w) {
  LossParts p;
  p.recon = reconstruction_error(target, fwd.y, fwd.batch);
  p.sparsity = sparsity_term(block);
  p.nontrivial = nontrivial_term(fwd.z, w.theta);
  p.total = w.lambda1 * p.recon + w.lambda2 * p.sparsity + p.nontrivial;
  return p;
}

FeatureMatrix recon_gradient(const FeatureMatrix& target, const FeatureMatrix& y,
                             int batch, double lambda1) {
  return (2.0 * lambda1 / batch) * (y - target);
}

void ae_backward(const AEBlock& block, const AEForward& fwd,
                 const FeatureMatrix& dy, const NeighborOp& m,
                 const LossWeights& w, AEGrads& grads, FeatureMatrix* dx) {
  const int k_count = block.latent_dim();
  const Eigen::Index flat_cols = block.c.cols();

  // Decoder.
  const FeatureMatrix d_dec = through_tanh(dy, fwd.y);
  accumulate_conv(grads.dec, d_dec, fwd.hd, fwd.mean_hd);
  const FeatureMatrix d_g =
      through_tanh(conv_input_gradient(block.dec, d_dec, m), fwd.hd);
  const ConstFlat d_g_flat(d_g.data(), fwd.batch, flat_cols);

  // Tied layer. z = h C^T and g = z C.
  grads.c.noalias() += fwd.z.transpose() * d_g_flat;
  RowMatrix dz = d_g_flat * block.c.transpose();
  for (int k = 0; k < k_count; ++k) {
    Eigen::Index arg = 0;
    const double peak = fwd.z.col(k).cwiseAbs().maxCoeff(&arg);
    if (peak > w.theta) {
      dz(arg, k) += (fwd.z(arg, k) > 0.0 ? 1.0 : -1.0) / k_count;
    }
  }
  const ConstFlat h_flat = as_flat(fwd.h, fwd.batch);
  grads.c.noalias() += dz.transpose() * h_flat;

  // Group sparsity, subgradient 0 at a zero group.
  const Eigen::Index v = block.vertex_count();
  const double scale = w.lambda2 / k_count;
  for (int k = 0; k < k_count; ++k) {
    for (Eigen::Index i = 0; i < v; ++i) {
      if (block.mask(k, i) == 0.0) continue;
      const auto group = block.c.row(k).segment(i * kFeatureDim, kFeatureDim);
      const double norm = group.norm();
      if (norm > 0.0) {
        grads.c.row(k).segment(i * kFeatureDim, kFeatureDim) +=
            (scale / norm) * group;
      }
    }
  }

  // Encoder.
  FeatureMatrix d_h(fwd.h.rows(), kFeatureDim);
  Flat(d_h.data(), fwd.batch, flat_cols) = dz * block.c;
  const FeatureMatrix d_enc = through_tanh(d_h, fwd.h);
  accumulate_conv(grads.enc, d_enc, fwd.x, fwd.mean_x);
  if (dx != nullptr) *dx = conv_input_gradient(block.enc, d_enc, m);
}

AdamState::AdamState(std::size_t size, AdamOptions options)
    : options_(options),
      m_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(size))),
      v_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(size))) {}

double AdamState::current_learning_rate() const {
  return options_.learning_rate *
         std::pow(options_.decay, static_cast<double>(t_) / options_.decay_steps);
}

void AdamState::step(double* params, const double* grads) {
  step({TensorRef{params, grads, static_cast<std::size_t>(m_.size())}});
}

void AdamState::step(const std::vector<TensorRef>& tensors) {
  std::size_t total = 0;
  for (const auto& t : tensors) total += t.size;
  if (total != static_cast<std::size_t>(m_.size())) {
    throw UsageError("ADAM state size does not match the parameters");
  }
  const double lr = current_learning_rate();
  ++t_;
  const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
  Eigen::Index at = 0;
  for (const auto& t : tensors) {
    for (std::size_t j = 0; j < t.size; ++j, ++at) {
      const double g = t.grad[j];
      m_[at] = options_.beta1 * m_[at] + (1.0 - options_.beta1) * g;
      v_[at] = options_.beta2 * v_[at] + (1.0 - options_.beta2) * g * g;
      t.param[j] -=
          lr * (m_[at] / c1) / (std::sqrt(v_[at] / c2) + options_.epsilon);
    }
  }
}

void adam_step(AdamState& state, AEBlock& block, const AEGrads& grads) {
  std::vector<AdamState::TensorRef> refs;
  grads.for_each_tensor([&](const double* g, std::size_t n) {
    refs.push_back({nullptr, g, n});
  });
  std::size_t i = 0;
  block.for_each_tensor([&](double* p, std::size_t n) {
    if (refs[i].size != n) throw UsageError("gradient layout does not match");
    refs[i++].param = p;
  });
  state.step(refs);
}

Eigen::VectorXd flatten(const AEBlock& block) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(block.parameter_count()));
  Eigen::Index at = 0;
  block.for_each_tensor([&](const double* p, std::size_t n) {
    out.segment(at, static_cast<Eigen::Index>(n)) =
        Eigen::Map<const Eigen::VectorXd>(p, static_cast<Eigen::Index>(n));
    at += static_cast<Eigen::Index>(n);
  });
  return out;
}

Eigen::VectorXd flatten(const AEGrads& grads) {
  std::size_t total = 0;
  grads.for_each_tensor([&](const double*, std::size_t n) { total += n; });
  Eigen::VectorXd out(static_cast<Eigen::Index>(total));
  Eigen::Index at = 0;
  grads.for_each_tensor([&](const double* p, std::size_t n) {
    out.segment(at, static_cast<Eigen::Index>(n)) =
        Eigen::Map<const Eigen::VectorXd>(p, static_cast<Eigen::Index>(n));
    at += static_cast<Eigen::Index>(n);
  });
  return out;
}

void unflatten(const Eigen::VectorXd& flat, AEBlock& block) {
  if (flat.size() != static_cast<Eigen::Index>(block.parameter_count())) {
    throw UsageError("flat parameter vector has the wrong size");
  }
  Eigen::Index at = 0;
  block.for_each_tensor([&](double* p, std::size_t n) {
    Eigen::Map<Eigen::VectorXd>(p, static_cast<Eigen::Index>(n)) =
        flat.segment(at, static_cast<Eigen::Index>(n));
    at += static_cast<Eigen::Index>(n);
  });
}

}  // namespace meshmodes
