#include "fognite/nn.hpp"

#include <cmath>
#include <random>

#include "fognite/bytes.hpp"
#include "fognite/error.hpp"
#include "fognite/kernels.hpp"

namespace fognite::nn {

namespace {

struct Layout {
  int conv_w = 0;
  int conv_b = 1;
  int lstm[2][3] = {{-1, -1, -1}, {-1, -1, -1}};  // direction x {wx, wh, b}
  std::vector<std::pair<int, int>> dense;        // (weight, bias)
  int out_w = -1;
  int out_b = -1;
};

Layout layout_of(const ModelConfig& cfg) {
  Layout l;
  int next = 2;
  const int dirs = cfg.bidirectional ? 2 : 1;
  for (int d = 0; d < dirs; ++d) {
    for (int k = 0; k < 3; ++k) l.lstm[d][k] = next++;
  }
  for (std::size_t i = 0; i < cfg.dense.size(); ++i) {
    l.dense.emplace_back(next, next + 1);
    next += 2;
  }
  l.out_w = next;
  l.out_b = next + 1;
  return l;
}

struct Shape {
  std::string name;
  int rows, cols, fan_in;
};

std::vector<Shape> shapes_of(const ModelConfig& cfg) {
  const int f = cfg.conv_filters;
  const int h = cfg.lstm_hidden;
  std::vector<Shape> s;
  s.push_back({"conv.weight", f, cfg.kernel, cfg.kernel});
  s.push_back({"conv.bias", f, 1, cfg.kernel});
  const char* dir_names[2] = {"fwd", "bwd"};
  for (int d = 0; d < (cfg.bidirectional ? 2 : 1); ++d) {
    const std::string p = std::string("lstm.") + dir_names[d];
    s.push_back({p + ".wx", 4 * h, f, f});
    s.push_back({p + ".wh", 4 * h, h, h});
    s.push_back({p + ".b", 4 * h, 1, f + h});
  }
  int in = cfg.lstm_output();
  for (std::size_t i = 0; i < cfg.dense.size(); ++i) {
    const std::string p = "dense" + std::to_string(i);
    s.push_back({p + ".weight", cfg.dense[i], in, in});
    s.push_back({p + ".bias", cfg.dense[i], 1, in});
    in = cfg.dense[i];
  }
  s.push_back({"out.weight", 1, in, in});
  s.push_back({"out.bias", 1, 1, in});
  return s;
}

const Matrix& at(const ModelParams& p, int idx) { return p.tensors[static_cast<std::size_t>(idx)].value; }
Matrix& at(ModelParams& p, int idx) { return p.tensors[static_cast<std::size_t>(idx)].value; }

void check_manifest(const ModelParams& params) {
  const auto shapes = shapes_of(params.config);
  if (shapes.size() != params.tensors.size()) throw ShapeError("params do not match their config");
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const auto& t = params.tensors[i].value;
    if (t.rows() != shapes[i].rows || t.cols() != shapes[i].cols) {
      throw ShapeError("tensor '" + params.tensors[i].name + "' has wrong shape");
    }
  }
}

Matrix lstm_forward(const Matrix& wx, const Matrix& wh, const Matrix& b, const std::vector<Matrix>& xs,
                    bool reverse, std::vector<LstmStepCache>& steps) {
  const auto h_dim = wh.cols();
  const auto batch = xs.front().cols();
  const auto len = static_cast<int>(xs.size());
  Matrix h = Matrix::Zero(h_dim, batch);
  Matrix c = Matrix::Zero(h_dim, batch);
  steps.assign(xs.size(), {});
  for (int s = 0; s < len; ++s) {
    const int t = reverse ? len - 1 - s : s;
    Matrix gates = wx * xs[static_cast<std::size_t>(t)] + wh * h;
    gates.colwise() += b.col(0);
    auto& st = steps[static_cast<std::size_t>(t)];
    st.i = kernels::sigmoid(gates.topRows(h_dim).array()).matrix();
    st.f = kernels::sigmoid(gates.middleRows(h_dim, h_dim).array()).matrix();
    st.g = gates.middleRows(2 * h_dim, h_dim).array().tanh().matrix();
    st.o = kernels::sigmoid(gates.bottomRows(h_dim).array()).matrix();
    c = (st.f.array() * c.array() + st.i.array() * st.g.array()).matrix();
    h = (st.o.array() * c.array().tanh()).matrix();
    st.c = c;
    st.h = h;
  }
  return h;
}

// Backprop through one LSTM direction. Accumulates into the gradient tensors
// and into dxs (one entry per sequence position).
void lstm_backward(const Matrix& wx, const Matrix& wh, const std::vector<Matrix>& xs,
                   const std::vector<LstmStepCache>& steps, bool reverse, const Matrix& dh_final,
                   Matrix& gwx, Matrix& gwh, Matrix& gb, std::vector<Matrix>& dxs) {
  const auto h_dim = wh.cols();
  const auto batch = dh_final.cols();
  const auto len = static_cast<int>(xs.size());
  Matrix dh = dh_final;
  Matrix dc_next = Matrix::Zero(h_dim, batch);
  const Matrix zeros = Matrix::Zero(h_dim, batch);
  Matrix dgates(4 * h_dim, batch);
  for (int s = len - 1; s >= 0; --s) {
    const int t = reverse ? len - 1 - s : s;
    const int tp = reverse ? t + 1 : t - 1;
    const bool has_prev = s > 0;
    const auto& st = steps[static_cast<std::size_t>(t)];
    const Matrix& c_prev = has_prev ? steps[static_cast<std::size_t>(tp)].c : zeros;
    const Matrix& h_prev = has_prev ? steps[static_cast<std::size_t>(tp)].h : zeros;

    const auto tc = st.c.array().tanh();
    const auto o = st.o.array();
    const auto i = st.i.array();
    const auto f = st.f.array();
    const auto g = st.g.array();
    const Eigen::ArrayXXd dc = dc_next.array() + dh.array() * o * (1.0 - tc * tc);
    dgates.topRows(h_dim) = (dc * g * i * (1.0 - i)).matrix();
    dgates.middleRows(h_dim, h_dim) = (dc * c_prev.array() * f * (1.0 - f)).matrix();
    dgates.middleRows(2 * h_dim, h_dim) = (dc * i * (1.0 - g * g)).matrix();
    dgates.bottomRows(h_dim) = (dh.array() * tc * o * (1.0 - o)).matrix();

    const Matrix& x = xs[static_cast<std::size_t>(t)];
    gwx.noalias() += dgates * x.transpose();
    gwh.noalias() += dgates * h_prev.transpose();
    gb.col(0) += dgates.rowwise().sum();
    dxs[static_cast<std::size_t>(t)].noalias() += wx.transpose() * dgates;
    dh.noalias() = wh.transpose() * dgates;
    dc_next = (dc * f).matrix();
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (window <= 0 || conv_filters <= 0 || kernel <= 0 || stride <= 0 || pool <= 0 || lstm_hidden <= 0) {
    throw ConfigError("model config: layer sizes must be > 0");
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw ConfigError("model config: dropout_rate must lie in [0, 1)");
  }
  for (int d : dense) {
    if (d <= 0) throw ConfigError("model config: dense sizes must be > 0");
  }
  if (kernel > window) throw ConfigError("model config: kernel longer than window");
  if (seq_length() < 1) throw ConfigError("model config: pooling leaves an empty sequence");
}

std::size_t expected_param_count(const ModelConfig& cfg) {
  const std::size_t f = static_cast<std::size_t>(cfg.conv_filters);
  const std::size_t h = static_cast<std::size_t>(cfg.lstm_hidden);
  std::size_t n = f * static_cast<std::size_t>(cfg.kernel) + f;
  n += (cfg.bidirectional ? 2u : 1u) * (4 * h * (f + h) + 4 * h);
  std::size_t in = static_cast<std::size_t>(cfg.lstm_output());
  for (int d : cfg.dense) {
    n += in * static_cast<std::size_t>(d) + static_cast<std::size_t>(d);
    in = static_cast<std::size_t>(d);
  }
  return n + in + 1;
}

ModelParams ModelParams::zeros_like() const {
  ModelParams z;
  z.config = config;
  z.tensors.reserve(tensors.size());
  for (const auto& t : tensors) z.tensors.push_back({t.name, Matrix::Zero(t.value.rows(), t.value.cols())});
  return z;
}

bool ModelParams::same_shape(const ModelParams& other) const {
  if (tensors.size() != other.tensors.size()) return false;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (tensors[i].name != other.tensors[i].name || tensors[i].value.rows() != other.tensors[i].value.rows() ||
        tensors[i].value.cols() != other.tensors[i].value.cols()) {
      return false;
    }
  }
  return true;
}

double ModelParams::squared_norm() const {
  double s = 0.0;
  for (const auto& t : tensors) s += t.value.squaredNorm();
  return s;
}

std::size_t param_count(const ModelParams& params) {
  std::size_t n = 0;
  for (const auto& t : params.tensors) n += static_cast<std::size_t>(t.value.size());
  return n;
}

ModelParams build_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  ModelParams p;
  p.config = config;
  for (const auto& s : shapes_of(config)) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(s.fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Matrix m(s.rows, s.cols);
    // Row-major fill so the draw order matches the serialized order.
    for (int r = 0; r < s.rows; ++r) {
      for (int c = 0; c < s.cols; ++c) m(r, c) = dist(rng);
    }
    p.tensors.push_back({s.name, std::move(m)});
  }
  return p;
}

ForwardResult forward(const ModelParams& params, const Matrix& inputs, Mode mode, std::uint64_t dropout_seed) {
  const ModelConfig& cfg = params.config;
  if (inputs.rows() != cfg.window) {
    throw ShapeError("forward: expected window of " + std::to_string(cfg.window) + ", got " +
                     std::to_string(inputs.rows()));
  }
  if (inputs.cols() == 0) throw ShapeError("forward: empty batch");
  check_manifest(params);
  const Layout lay = layout_of(cfg);
  const auto batch = inputs.cols();

  ForwardCache cache;
  cache.mode = mode;
  cache.input = inputs;

  const Matrix& kern = at(params, lay.conv_w);
  const Matrix& kbias = at(params, lay.conv_b);
  const int conv_len = cfg.conv_length();
  cache.conv_pre.resize(static_cast<std::size_t>(conv_len));
  for (int t = 0; t < conv_len; ++t) {
    Matrix pre = kbias.col(0).replicate(1, batch);
    for (int k = 0; k < cfg.kernel; ++k) {
      pre.noalias() += kern.col(k) * inputs.row(t * cfg.stride + k);
    }
    cache.conv_pre[static_cast<std::size_t>(t)] = std::move(pre);
  }

  const int seq = cfg.seq_length();
  cache.pooled.resize(static_cast<std::size_t>(seq));
  cache.pool_arg.resize(static_cast<std::size_t>(seq));
  for (int s = 0; s < seq; ++s) {
    Matrix best = kernels::relu(cache.conv_pre[static_cast<std::size_t>(s * cfg.pool)].array()).matrix();
    Eigen::MatrixXi arg = Eigen::MatrixXi::Constant(best.rows(), best.cols(), s * cfg.pool);
    for (int j = 1; j < cfg.pool; ++j) {
      const int idx = s * cfg.pool + j;
      const Matrix& cand = cache.conv_pre[static_cast<std::size_t>(idx)];
      for (Eigen::Index c = 0; c < best.cols(); ++c) {
        for (Eigen::Index r = 0; r < best.rows(); ++r) {
          const double v = std::max(0.0, cand(r, c));
          if (v > best(r, c)) {
            best(r, c) = v;
            arg(r, c) = idx;
          }
        }
      }
    }
    cache.pooled[static_cast<std::size_t>(s)] = std::move(best);
    cache.pool_arg[static_cast<std::size_t>(s)] = std::move(arg);
  }

  const int h = cfg.lstm_hidden;
  cache.lstm_out.resize(cfg.lstm_output(), batch);
  cache.lstm_out.topRows(h) = lstm_forward(at(params, lay.lstm[0][0]), at(params, lay.lstm[0][1]),
                                           at(params, lay.lstm[0][2]), cache.pooled, false, cache.fwd);
  if (cfg.bidirectional) {
    cache.lstm_out.bottomRows(h) = lstm_forward(at(params, lay.lstm[1][0]), at(params, lay.lstm[1][1]),
                                                at(params, lay.lstm[1][2]), cache.pooled, true, cache.bwd);
  }

  Matrix act = cache.lstm_out;
  if (mode == Mode::train && cfg.dropout_rate > 0.0) {
    std::mt19937_64 rng(dropout_seed);
    std::bernoulli_distribution keep(1.0 - cfg.dropout_rate);
    const double scale = 1.0 / (1.0 - cfg.dropout_rate);
    cache.dropout_mask.resize(act.rows(), act.cols());
    for (Eigen::Index c = 0; c < act.cols(); ++c) {
      for (Eigen::Index r = 0; r < act.rows(); ++r) cache.dropout_mask(r, c) = keep(rng) ? scale : 0.0;
    }
    act = act.cwiseProduct(cache.dropout_mask);
  }
  cache.dense_act.push_back(act);
  for (const auto& [w, b] : lay.dense) {
    Matrix z = at(params, w) * cache.dense_act.back();
    z.colwise() += at(params, b).col(0);
    cache.dense_act.push_back(kernels::relu(z.array()).matrix());
    cache.dense_pre.push_back(std::move(z));
  }
  Matrix out = at(params, lay.out_w) * cache.dense_act.back();
  out.array() += at(params, lay.out_b)(0, 0);
  cache.prediction = out.row(0).transpose();
  cache.valid = true;

  ForwardResult result;
  result.prediction = cache.prediction;
  result.cache = std::move(cache);
  return result;
}

double predict(const ModelParams& params, const Vector& input) {
  return forward(params, Matrix(input), Mode::eval).prediction(0);
}

Vector predict(const ModelParams& params, const Matrix& inputs) {
  return forward(params, inputs, Mode::eval).prediction;
}

double loss(std::span<const double> predictions, std::span<const double> targets, const ModelParams& params,
            double lambda) {
  if (predictions.size() != targets.size()) throw InputError("loss: predictions and targets differ in length");
  if (predictions.empty()) throw InputError("loss: need at least one sample");
  double sse = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double d = targets[i] - predictions[i];
    sse += d * d;
  }
  const double reg = lambda == 0.0 ? 0.0 : lambda * params.squared_norm();
  return sse / static_cast<double>(predictions.size()) + reg;
}

double loss(const Vector& predictions, const Vector& targets, const ModelParams& params, double lambda) {
  return loss(std::span<const double>(predictions.data(), static_cast<std::size_t>(predictions.size())),
              std::span<const double>(targets.data(), static_cast<std::size_t>(targets.size())), params, lambda);
}

ModelParams backward(const ModelParams& params, const ForwardCache& cache, const Vector& targets, double lambda) {
  if (!cache.valid) throw UsageError("backward: no cached forward pass");
  if (targets.size() != cache.prediction.size()) throw ShapeError("backward: targets do not match batch");
  const ModelConfig& cfg = params.config;
  const Layout lay = layout_of(cfg);
  const auto batch = cache.input.cols();
  ModelParams grads = params.zeros_like();

  Eigen::RowVectorXd dpred = (2.0 / static_cast<double>(batch)) * (cache.prediction - targets).transpose();
  at(grads, lay.out_w).noalias() = dpred * cache.dense_act.back().transpose();
  at(grads, lay.out_b)(0, 0) = dpred.sum();
  Matrix da = at(params, lay.out_w).transpose() * dpred;
  for (int l = static_cast<int>(lay.dense.size()) - 1; l >= 0; --l) {
    const auto [w, b] = lay.dense[static_cast<std::size_t>(l)];
    const Matrix dz = da.cwiseProduct(kernels::relu_grad(cache.dense_pre[static_cast<std::size_t>(l)].array()).matrix());
    at(grads, w).noalias() = dz * cache.dense_act[static_cast<std::size_t>(l)].transpose();
    at(grads, b).col(0) = dz.rowwise().sum();
    da = at(params, w).transpose() * dz;
  }
  if (cache.dropout_mask.size() > 0) da = da.cwiseProduct(cache.dropout_mask);

  const int h = cfg.lstm_hidden;
  const int seq = cfg.seq_length();
  std::vector<Matrix> dpooled(static_cast<std::size_t>(seq), Matrix::Zero(cfg.conv_filters, batch));
  lstm_backward(at(params, lay.lstm[0][0]), at(params, lay.lstm[0][1]), cache.pooled, cache.fwd, false,
                da.topRows(h), at(grads, lay.lstm[0][0]), at(grads, lay.lstm[0][1]), at(grads, lay.lstm[0][2]),
                dpooled);
  if (cfg.bidirectional) {
    lstm_backward(at(params, lay.lstm[1][0]), at(params, lay.lstm[1][1]), cache.pooled, cache.bwd, true,
                  da.bottomRows(h), at(grads, lay.lstm[1][0]), at(grads, lay.lstm[1][1]),
                  at(grads, lay.lstm[1][2]), dpooled);
  }

  const int conv_len = cfg.conv_length();
  std::vector<Matrix> dconv(static_cast<std::size_t>(conv_len), Matrix::Zero(cfg.conv_filters, batch));
  for (int s = 0; s < seq; ++s) {
    const auto& arg = cache.pool_arg[static_cast<std::size_t>(s)];
    const auto& dp = dpooled[static_cast<std::size_t>(s)];
    for (Eigen::Index c = 0; c < dp.cols(); ++c) {
      for (Eigen::Index r = 0; r < dp.rows(); ++r) dconv[static_cast<std::size_t>(arg(r, c))](r, c) += dp(r, c);
    }
  }
  Matrix& gk = at(grads, lay.conv_w);
  Matrix& gkb = at(grads, lay.conv_b);
  for (int t = 0; t < conv_len; ++t) {
    const Matrix dpre = dconv[static_cast<std::size_t>(t)].cwiseProduct(
        kernels::relu_grad(cache.conv_pre[static_cast<std::size_t>(t)].array()).matrix());
    for (int k = 0; k < cfg.kernel; ++k) gk.col(k).noalias() += dpre * cache.input.row(t * cfg.stride + k).transpose();
    gkb.col(0) += dpre.rowwise().sum();
  }

  if (lambda != 0.0) {
    for (std::size_t i = 0; i < grads.tensors.size(); ++i) grads.tensors[i].value += 2.0 * lambda * params.tensors[i].value;
  }
  return grads;
}

OptimizerState OptimizerState::for_params(const ModelParams& params, double learning_rate) {
  OptimizerState s;
  s.learning_rate = learning_rate;
  for (const auto& t : params.tensors) {
    s.m.push_back(Matrix::Zero(t.value.rows(), t.value.cols()));
    s.v.push_back(Matrix::Zero(t.value.rows(), t.value.cols()));
  }
  return s;
}

void adam_step(ModelParams& params, const ModelParams& grads, OptimizerState& state) {
  if (!params.same_shape(grads) || state.m.size() != params.tensors.size() ||
      state.v.size() != params.tensors.size()) {
    throw ShapeError("adam_step: params, gradients and optimizer state differ in shape");
  }
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    if (state.m[i].rows() != params.tensors[i].value.rows() || state.m[i].cols() != params.tensors[i].value.cols()) {
      throw ShapeError("adam_step: optimizer moment shape mismatch");
    }
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    const auto g = grads.tensors[i].value.array();
    state.m[i].array() = state.beta1 * state.m[i].array() + (1.0 - state.beta1) * g;
    state.v[i].array() = state.beta2 * state.v[i].array() + (1.0 - state.beta2) * g * g;
    params.tensors[i].value.array() -=
        state.learning_rate * (state.m[i].array() / bc1) / ((state.v[i].array() / bc2).sqrt() + state.epsilon);
  }
}

std::vector<std::uint8_t> serialize(const ModelParams& params) {
  ByteWriter w;
  w.magic("FGNM");
  w.u32(1);
  const auto& c = params.config;
  w.i32(c.window);
  w.i32(c.conv_filters);
  w.i32(c.kernel);
  w.i32(c.stride);
  w.i32(c.pool);
  w.i32(c.lstm_hidden);
  w.u8(c.bidirectional ? 1 : 0);
  w.f64(c.dropout_rate);
  w.u32(static_cast<std::uint32_t>(c.dense.size()));
  for (int d : c.dense) w.i32(d);
  w.u32(static_cast<std::uint32_t>(params.tensors.size()));
  for (const auto& t : params.tensors) {
    w.str(t.name);
    w.u32(static_cast<std::uint32_t>(t.value.rows()));
    w.u32(static_cast<std::uint32_t>(t.value.cols()));
  }
  for (const auto& t : params.tensors) {
    for (Eigen::Index r = 0; r < t.value.rows(); ++r) {
      for (Eigen::Index col = 0; col < t.value.cols(); ++col) w.f32(static_cast<float>(t.value(r, col)));
    }
  }
  return w.take();
}

ModelParams deserialize(std::span<const std::uint8_t> blob) {
  ByteReader r(blob);
  r.expect_magic("FGNM");
  if (r.u32() != 1) throw ProtocolError("model blob: unsupported version");
  ModelParams p;
  auto& c = p.config;
  c.window = r.i32();
  c.conv_filters = r.i32();
  c.kernel = r.i32();
  c.stride = r.i32();
  c.pool = r.i32();
  c.lstm_hidden = r.i32();
  c.bidirectional = r.u8() != 0;
  c.dropout_rate = r.f64();
  c.dense.resize(r.u32());
  for (auto& d : c.dense) d = r.i32();
  const std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    Tensor t;
    t.name = r.str();
    const auto rows = r.u32();
    const auto cols = r.u32();
    t.value.resize(rows, cols);
    p.tensors.push_back(std::move(t));
  }
  for (auto& t : p.tensors) {
    for (Eigen::Index row = 0; row < t.value.rows(); ++row) {
      for (Eigen::Index col = 0; col < t.value.cols(); ++col) t.value(row, col) = static_cast<double>(r.f32());
    }
  }
  if (!r.done()) throw ProtocolError("model blob: trailing bytes");
  check_manifest(p);
  return p;
}

}  // namespace fognite::nn
