#pragma once

// CNN-LSTM load forecaster: Conv1D(ReLU) -> MaxPool -> (Bi)LSTM -> dropout ->
// Dense(ReLU) stack -> linear output. Forward and backward passes are written
// out by hand for exactly this layer stack and operate on whole mini-batches
// (one column per sample).

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace fognite::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct ModelConfig {
  int window = 96;
  int conv_filters = 32;
  int kernel = 5;
  int stride = 1;
  int pool = 2;
  int lstm_hidden = 64;
  bool bidirectional = true;
  double dropout_rate = 0.3;
  std::vector<int> dense{128, 64};

  // Throws ConfigError on impossible shapes.
  void validate() const;
  int conv_length() const { return (window - kernel) / stride + 1; }
  int seq_length() const { return conv_length() / pool; }
  int lstm_output() const { return lstm_hidden * (bidirectional ? 2 : 1); }

  bool operator==(const ModelConfig&) const = default;
};

// Closed-form trainable parameter count of a config.
std::size_t expected_param_count(const ModelConfig& config);

struct Tensor {
  std::string name;
  Matrix value;
};

/// Flat, ordered parameter store. Tensor order is fixed by the config:
/// conv.weight, conv.bias, lstm.fwd.{wx,wh,b}, [lstm.bwd.{wx,wh,b}],
/// dense<i>.{weight,bias}..., out.weight, out.bias.
struct ModelParams {
  ModelConfig config;
  std::vector<Tensor> tensors;

  // Same manifest, every entry zero.
  ModelParams zeros_like() const;
  bool same_shape(const ModelParams& other) const;
  double squared_norm() const;
};

std::size_t param_count(const ModelParams& params);

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) per tensor, deterministic per seed.
ModelParams build_model(const ModelConfig& config, std::uint64_t seed);

enum class Mode { train, eval };

struct LstmStepCache {
  Matrix i, f, g, o, c, h;  // each hidden x batch
};

/// Activations recorded by forward() and consumed by backward().
struct ForwardCache {
  bool valid = false;
  Mode mode = Mode::eval;
  Matrix input;                      // window x batch
  std::vector<Matrix> conv_pre;      // conv_length entries, filters x batch
  std::vector<Matrix> pooled;        // seq_length entries
  std::vector<Eigen::MatrixXi> pool_arg;  // index into conv_pre per element
  std::vector<LstmStepCache> fwd, bwd;    // bwd indexed by sequence position
  Matrix lstm_out;                   // lstm_output x batch, before dropout
  Matrix dropout_mask;               // scaled keep mask (empty in eval)
  std::vector<Matrix> dense_pre, dense_act;  // dense_act[0] is the dropout output
  Vector prediction;
};

struct ForwardResult {
  Vector prediction;  // one per column of the input
  ForwardCache cache;
};

// Batch forward: `inputs` is window x batch. Throws ShapeError on wrong rows.
ForwardResult forward(const ModelParams& params, const Matrix& inputs, Mode mode,
                      std::uint64_t dropout_seed = 0);
// Single window convenience overload.
double predict(const ModelParams& params, const Vector& input);
Vector predict(const ModelParams& params, const Matrix& inputs);

// (1/N) sum (y - f(x))^2 + lambda * ||theta||^2. Throws InputError on N = 0
// or mismatched lengths.
double loss(std::span<const double> predictions, std::span<const double> targets,
            const ModelParams& params, double lambda);
double loss(const Vector& predictions, const Vector& targets, const ModelParams& params,
            double lambda);

// Gradient of loss() w.r.t. every tensor, laid out like `params`.
// Throws UsageError when the cache is missing.
ModelParams backward(const ModelParams& params, const ForwardCache& cache, const Vector& targets,
                     double lambda);

struct OptimizerState {
  std::vector<Matrix> m, v;
  long long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double learning_rate = 1e-3;
  double epsilon = 1e-8;

  static OptimizerState for_params(const ModelParams& params, double learning_rate);
};

// Bias-corrected Adam. Throws ShapeError on mismatched shapes.
void adam_step(ModelParams& params, const ModelParams& grads, OptimizerState& state);

// Self-describing binary blob: "FGNM", version, config echo, tensor manifest,
// then every value as a little-endian float32, row-major per tensor.
std::vector<std::uint8_t> serialize(const ModelParams& params);
ModelParams deserialize(std::span<const std::uint8_t> blob);

}  // namespace fognite::nn
