#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace uavrelay {

// Fully connected net with tanh hidden activations and a linear output.
// All weights live in one flat array: for each layer, W (out x in,
// column-major) followed by b (out).
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::vector<int> sizes, std::mt19937_64& rng, double output_gain);

  const std::vector<int>& sizes() const { return sizes_; }
  int input_size() const { return sizes_.front(); }
  int output_size() const { return sizes_.back(); }
  std::size_t parameter_count() const { return params_.size(); }
  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }

  // Activations cached for backward(); columns are samples.
  struct Tape {
    std::vector<Eigen::MatrixXd> activations;
  };

  Eigen::MatrixXd forward(const Eigen::MatrixXd& input, Tape* tape = nullptr) const;
  // Accumulates d(loss)/d(params) into grad given d(loss)/d(output).
  void backward(const Tape& tape, const Eigen::MatrixXd& grad_output,
                std::span<double> grad) const;

  bool operator==(const Mlp&) const = default;

 private:
  std::size_t layer_offset(std::size_t layer) const { return offsets_[layer]; }

  std::vector<int> sizes_;
  std::vector<std::size_t> offsets_;
  std::vector<double> params_;
};

// Adam over a flat parameter array.
struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t steps = 0;

  bool operator==(const AdamState&) const = default;
};

void adam_step(std::span<double> params, std::span<const double> grad,
               AdamState& state, double learning_rate, double beta1 = 0.9,
               double beta2 = 0.999, double epsilon = 1e-8);

}  // namespace uavrelay
