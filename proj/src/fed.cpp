#include "fognite/fed.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "fognite/bytes.hpp"
#include "fognite/error.hpp"

namespace fognite::fed {

namespace {

nn::Matrix stack_inputs(std::span<const Sample> data, std::span<const std::size_t> idx, int window) {
  nn::Matrix x(window, static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) {
    const auto& s = data[idx[j]];
    if (s.input.size() != window) throw ShapeError("sample window does not match model");
    x.col(static_cast<Eigen::Index>(j)) = s.input;
  }
  return x;
}

std::vector<std::uint8_t> deflate_bytes(std::span<const std::uint8_t> in) {
  uLongf cap = compressBound(static_cast<uLong>(in.size()));
  std::vector<std::uint8_t> out(cap);
  if (compress2(out.data(), &cap, in.data(), static_cast<uLong>(in.size()), Z_BEST_COMPRESSION) != Z_OK) {
    throw ProtocolError("deflate failed");
  }
  out.resize(cap);
  return out;
}

std::vector<std::uint8_t> inflate_bytes(std::span<const std::uint8_t> in, std::size_t raw_size) {
  std::vector<std::uint8_t> out(raw_size);
  uLongf len = static_cast<uLongf>(raw_size);
  if (uncompress(out.data(), &len, in.data(), static_cast<uLong>(in.size())) != Z_OK || len != raw_size) {
    throw ProtocolError("inflate failed");
  }
  return out;
}

}  // namespace

std::optional<LocalUpdate> local_train(NodeId node_id, const nn::ModelParams& start, std::span<const Sample> data,
                                       const TrainConfig& cfg, std::uint64_t seed, nn::OptimizerState* opt) {
  if (data.empty()) return std::nullopt;
  if (cfg.epochs < 0 || cfg.batch_size <= 0) throw ConfigError("local_train: bad epochs/batch_size");
  LocalUpdate up;
  up.node_id = node_id;
  up.new_params = start;
  up.sample_count = data.size();

  nn::OptimizerState fresh;
  nn::OptimizerState* state = opt;
  if (!state || state->m.size() != start.tensors.size()) {
    fresh = nn::OptimizerState::for_params(start, cfg.learning_rate);
    if (state) *state = fresh;
    else state = &fresh;
  }
  state->learning_rate = cfg.learning_rate;

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const int window = start.config.window;
  for (int e = 0; e < cfg.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size));
      std::span<const std::size_t> idx(order.data() + b, end - b);
      const nn::Matrix x = stack_inputs(data, idx, window);
      nn::Vector y(static_cast<Eigen::Index>(idx.size()));
      for (std::size_t j = 0; j < idx.size(); ++j) y(static_cast<Eigen::Index>(j)) = data[idx[j]].target;
      auto fwd = nn::forward(up.new_params, x, nn::Mode::train, rng());
      const auto grads = nn::backward(up.new_params, fwd.cache, y, cfg.lambda);
      nn::adam_step(up.new_params, grads, *state);
    }
  }
  return up;
}

double dataset_mse(const nn::ModelParams& params, std::span<const Sample> data) {
  if (data.empty()) throw InputError("dataset_mse: empty dataset");
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  double sse = 0.0;
  constexpr std::size_t chunk = 256;
  for (std::size_t b = 0; b < idx.size(); b += chunk) {
    const std::size_t end = std::min(idx.size(), b + chunk);
    std::span<const std::size_t> part(idx.data() + b, end - b);
    const nn::Vector pred = nn::predict(params, stack_inputs(data, part, params.config.window));
    for (std::size_t j = 0; j < part.size(); ++j) {
      const double d = pred(static_cast<Eigen::Index>(j)) - data[part[j]].target;
      sse += d * d;
    }
  }
  return sse / static_cast<double>(data.size());
}

nn::ModelParams fedavg_aggregate(const nn::ModelParams& global, std::span<const LocalUpdate> updates) {
  if (updates.empty()) return global;
  double total = 0.0;
  for (const auto& u : updates) {
    if (!u.new_params.same_shape(global)) {
      throw ProtocolError("fedavg: update from node " + std::to_string(u.node_id) + " has a foreign manifest");
    }
    if (u.sample_count == 0) throw ProtocolError("fedavg: update with zero samples");
    total += static_cast<double>(u.sample_count);
  }
  // Weight 1: exactly w_k.
  if (updates.size() == 1) return updates[0].new_params;
  nn::ModelParams next = global;
  for (const auto& u : updates) {
    const double weight = static_cast<double>(u.sample_count) / total;
    for (std::size_t i = 0; i < next.tensors.size(); ++i) {
      next.tensors[i].value += weight * (u.new_params.tensors[i].value - global.tensors[i].value);
    }
  }
  return next;
}

nn::ModelParams prune(const nn::ModelParams& params, double threshold) {
  if (threshold < 0.0) throw InputError("prune: threshold must be >= 0");
  nn::ModelParams out = params;
  for (auto& t : out.tensors) {
    t.value = (t.value.array().abs() < threshold).select(0.0, t.value);
  }
  return out;
}

void CompressionConfig::validate() const {
  if (quant_bits != 8) throw ConfigError("compression: only 8-bit quantization is supported");
  if (!(prune_threshold >= 0.0)) throw ConfigError("compression: prune_threshold must be >= 0");
}

QuantizedBlob quantize8(const nn::ModelParams& params, std::uint32_t round, NodeId node_id) {
  QuantizedBlob blob;
  blob.round = round;
  blob.node_id = node_id;
  for (const auto& t : params.tensors) {
    if (!t.value.allFinite()) throw InputError("quantize8: tensor '" + t.name + "' has non-finite values");
    QuantizedTensor q;
    q.name = t.name;
    q.rows = static_cast<std::uint32_t>(t.value.rows());
    q.cols = static_cast<std::uint32_t>(t.value.cols());
    q.min = t.value.size() ? t.value.minCoeff() : 0.0;
    const double max = t.value.size() ? t.value.maxCoeff() : 0.0;
    q.scale = (max - q.min) / 255.0;
    q.codes.reserve(static_cast<std::size_t>(t.value.size()));
    for (Eigen::Index r = 0; r < t.value.rows(); ++r) {
      for (Eigen::Index c = 0; c < t.value.cols(); ++c) {
        long code = 0;
        if (q.scale > 0.0) code = std::lround((t.value(r, c) - q.min) / q.scale);
        q.codes.push_back(static_cast<std::uint8_t>(std::clamp(code, 0L, 255L)));
      }
    }
    blob.tensors.push_back(std::move(q));
  }
  return blob;
}

nn::ModelParams dequantize(const QuantizedBlob& blob, const nn::ModelConfig& config) {
  nn::ModelParams ref = nn::build_model(config, 0);
  if (ref.tensors.size() != blob.tensors.size()) throw ProtocolError("dequantize: tensor count mismatch");
  for (std::size_t i = 0; i < blob.tensors.size(); ++i) {
    const auto& q = blob.tensors[i];
    auto& t = ref.tensors[i];
    if (q.name != t.name || q.rows != t.value.rows() || q.cols != t.value.cols() ||
        q.codes.size() != static_cast<std::size_t>(t.value.size())) {
      throw ProtocolError("dequantize: record '" + q.name + "' does not match the model manifest");
    }
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < t.value.rows(); ++r) {
      for (Eigen::Index c = 0; c < t.value.cols(); ++c) t.value(r, c) = q.min + q.codes[k++] * q.scale;
    }
  }
  return ref;
}

std::vector<std::uint8_t> encode(const QuantizedBlob& blob, bool entropy_coding) {
  ByteWriter w;
  w.magic("FGNQ");
  w.u32(1);
  w.u32(blob.round);
  w.i32(blob.node_id);
  w.u8(entropy_coding ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(blob.tensors.size()));
  std::vector<std::uint8_t> codes;
  for (const auto& q : blob.tensors) {
    w.str(q.name);
    w.u32(q.rows);
    w.u32(q.cols);
    w.f64(q.min);
    w.f64(q.scale);
    codes.insert(codes.end(), q.codes.begin(), q.codes.end());
  }
  if (entropy_coding) {
    const auto packed = deflate_bytes(codes);
    w.u32(static_cast<std::uint32_t>(packed.size()));
    w.raw(packed);
  } else {
    w.raw(codes);
  }
  return w.take();
}

QuantizedBlob decode(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic("FGNQ");
  if (r.u32() != 1) throw ProtocolError("quantized blob: unsupported version");
  QuantizedBlob blob;
  blob.round = r.u32();
  blob.node_id = r.i32();
  const bool deflated = r.u8() != 0;
  const std::uint32_t n = r.u32();
  std::size_t total = 0;
  for (std::uint32_t i = 0; i < n; ++i) {
    QuantizedTensor q;
    q.name = r.str();
    q.rows = r.u32();
    q.cols = r.u32();
    q.min = r.f64();
    q.scale = r.f64();
    total += static_cast<std::size_t>(q.rows) * q.cols;
    blob.tensors.push_back(std::move(q));
  }
  std::vector<std::uint8_t> codes;
  if (deflated) {
    const std::uint32_t packed = r.u32();
    codes = inflate_bytes(r.raw(packed), total);
  } else {
    auto raw = r.raw(total);
    codes.assign(raw.begin(), raw.end());
  }
  if (!r.done()) throw ProtocolError("quantized blob: trailing bytes");
  std::size_t off = 0;
  for (auto& q : blob.tensors) {
    const std::size_t len = static_cast<std::size_t>(q.rows) * q.cols;
    q.codes.assign(codes.begin() + static_cast<std::ptrdiff_t>(off),
                   codes.begin() + static_cast<std::ptrdiff_t>(off + len));
    off += len;
  }
  return blob;
}

std::vector<std::uint8_t> Channel::send_update(const QuantizedBlob& blob, bool entropy_coding) {
  auto bytes = encode(blob, entropy_coding);
  records_.push_back({Kind::quantized_update, blob.node_id, bytes.size()});
  return bytes;
}

nn::ModelParams Channel::broadcast(const nn::ModelParams& global, NodeId to) {
  const auto bytes = nn::serialize(global);
  records_.push_back({Kind::global_broadcast, to, bytes.size()});
  return nn::deserialize(bytes);
}

void RoundState::validate() const {
  if (round < 0) throw ConfigError("round: index must be >= 0");
  if (sync_interval <= 0 || train.epochs < 0 || train.batch_size <= 0) {
    throw ConfigError("round: sync_interval and batch_size must be > 0, epochs >= 0");
  }
}

RoundOutcome run_round(const RoundState& state, std::span<FlNode> nodes, const CompressionConfig& compression,
                       std::uint64_t seed, Channel* channel) {
  state.validate();
  compression.validate();
  Channel local_channel;
  Channel& ch = channel ? *channel : local_channel;

  RoundOutcome out{state, {}};
  out.log.round = state.round;
  std::vector<LocalUpdate> received;
  std::mt19937_64 seeder(seed);
  for (auto& node : nodes) {
    const std::uint64_t node_seed = seeder();
    if (!node.alive) {
      out.log.skipped.push_back(node.id);
      continue;
    }
    if (node.local.tensors.empty()) node.local = state.global;
    nn::OptimizerState* opt = nullptr;
    if (state.persist_optimizer) {
      if (!node.opt) node.opt = nn::OptimizerState::for_params(node.local, state.train.learning_rate);
      opt = &*node.opt;
    }
    auto update = local_train(node.id, node.local, node.data, state.train, node_seed, opt);
    if (!update) {
      out.log.skipped.push_back(node.id);
      continue;
    }
    node.local = update->new_params;
    out.log.participants.push_back(node.id);

    // The update travels as its difference to w_t; the aggregator adds w_t back.
    nn::ModelParams delta = update->new_params;
    for (std::size_t i = 0; i < delta.tensors.size(); ++i) delta.tensors[i].value -= state.global.tensors[i].value;
    const auto blob = quantize8(prune(delta, compression.prune_threshold), static_cast<std::uint32_t>(state.round),
                                node.id);
    const auto wire = ch.send_update(blob, compression.entropy_coding);
    out.log.raw_bytes += nn::serialize(update->new_params).size();
    out.log.compressed_bytes += wire.size();

    LocalUpdate arrived;
    arrived.node_id = node.id;
    arrived.sample_count = update->sample_count;
    arrived.new_params = dequantize(decode(wire), state.global.config);
    for (std::size_t i = 0; i < delta.tensors.size(); ++i) {
      arrived.new_params.tensors[i].value += state.global.tensors[i].value;
    }
    received.push_back(std::move(arrived));
  }

  if (!received.empty()) {
    out.state.global = fedavg_aggregate(state.global, received);
    out.log.aggregated = true;
  }
  out.state.round = state.round + 1;
  if (out.state.round % state.sync_interval == 0) {
    out.log.rebroadcast = true;
    for (auto& node : nodes) {
      if (node.alive) node.local = ch.broadcast(out.state.global, node.id);
    }
  }
  return out;
}

}  // namespace fognite::fed
