#include "uavrelay/mlp.hpp"

#include <cmath>

#include "uavrelay/errors.hpp"

namespace uavrelay {
namespace {

// Orthogonal init: QR of a Gaussian matrix, scaled by gain.
Eigen::MatrixXd orthogonal(int rows, int cols, double gain,
                           std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const int big = std::max(rows, cols);
  const int small = std::min(rows, cols);
  Eigen::MatrixXd g(big, small);
  for (int j = 0; j < small; ++j) {
    for (int i = 0; i < big; ++i) g(i, j) = normal(rng);
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(big, small);
  // Sign fix makes the factorization unique.
  const Eigen::MatrixXd r = qr.matrixQR().topRows(small);
  for (int j = 0; j < small; ++j) {
    if (r(j, j) < 0) q.col(j) *= -1.0;
  }
  Eigen::MatrixXd w = rows >= cols ? q : Eigen::MatrixXd(q.transpose());
  return gain * w;
}

}  // namespace

Mlp::Mlp(std::vector<int> sizes, std::mt19937_64& rng, double output_gain)
    : sizes_(std::move(sizes)) {
  if (sizes_.size() < 2) throw ContractViolation("mlp needs >= 2 sizes");
  std::size_t total = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    offsets_.push_back(total);
    total += static_cast<std::size_t>(sizes_[l + 1]) * (sizes_[l] + 1);
  }
  params_.assign(total, 0.0);
  const std::size_t layers = sizes_.size() - 1;
  for (std::size_t l = 0; l < layers; ++l) {
    const int in = sizes_[l];
    const int out = sizes_[l + 1];
    const double gain = l + 1 == layers ? output_gain : std::sqrt(2.0);
    Eigen::Map<Eigen::MatrixXd> w(params_.data() + offsets_[l], out, in);
    w = orthogonal(out, in, gain, rng);
  }
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& input, Tape* tape) const {
  const std::size_t layers = sizes_.size() - 1;
  if (tape) {
    tape->activations.clear();
    tape->activations.push_back(input);
  }
  Eigen::MatrixXd x = input;
  for (std::size_t l = 0; l < layers; ++l) {
    const int in = sizes_[l];
    const int out = sizes_[l + 1];
    Eigen::Map<const Eigen::MatrixXd> w(params_.data() + offsets_[l], out, in);
    Eigen::Map<const Eigen::VectorXd> b(params_.data() + offsets_[l] + out * in,
                                        out);
    Eigen::MatrixXd z = w * x;
    z.colwise() += b;
    if (l + 1 < layers) z = z.array().tanh().matrix();
    if (tape) tape->activations.push_back(z);
    x = std::move(z);
  }
  return x;
}

void Mlp::backward(const Tape& tape, const Eigen::MatrixXd& grad_output,
                   std::span<double> grad) const {
  const std::size_t layers = sizes_.size() - 1;
  Eigen::MatrixXd delta = grad_output;
  for (std::size_t l = layers; l-- > 0;) {
    const int in = sizes_[l];
    const int out = sizes_[l + 1];
    const Eigen::MatrixXd& x = tape.activations[l];
    Eigen::Map<Eigen::MatrixXd> gw(grad.data() + offsets_[l], out, in);
    Eigen::Map<Eigen::VectorXd> gb(grad.data() + offsets_[l] + out * in, out);
    gw.noalias() += delta * x.transpose();
    gb += delta.rowwise().sum();
    if (l == 0) break;
    Eigen::Map<const Eigen::MatrixXd> w(params_.data() + offsets_[l], out, in);
    Eigen::MatrixXd back = w.transpose() * delta;
    // x is tanh output of the previous layer.
    delta = back.array() * (1.0 - x.array().square());
  }
}

void adam_step(std::span<double> params, std::span<const double> grad,
               AdamState& state, double learning_rate, double beta1,
               double beta2, double epsilon) {
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
    state.steps = 0;
  }
  ++state.steps;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.steps));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.steps));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grad[i];
    state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grad[i] * grad[i];
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] -= learning_rate * mhat / (std::sqrt(vhat) + epsilon);
  }
}

}  // namespace uavrelay
