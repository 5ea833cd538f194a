#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "fognite/grid.hpp"
#include "fognite/nn.hpp"
#include "fognite/telemetry.hpp"

namespace fognite::fed {

struct LocalUpdate {
  NodeId node_id = 0;
  nn::ModelParams new_params;
  std::size_t sample_count = 0;
};

struct TrainConfig {
  int epochs = 5;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double lambda = 1e-6;  // L2 weight of the loss
};

// Mini-batch Adam from a copy of `start`. Returns nullopt when `data` is
// empty (the node sits the round out). `opt` carries moments across calls
// when provided, otherwise a fresh optimizer is used.
std::optional<LocalUpdate> local_train(NodeId node_id, const nn::ModelParams& start,
                                       std::span<const Sample> data, const TrainConfig& cfg,
                                       std::uint64_t seed, nn::OptimizerState* opt = nullptr);

// Mean squared-error loss of `params` over `data` in eval mode (lambda = 0).
double dataset_mse(const nn::ModelParams& params, std::span<const Sample> data);

/// w_{t+1} = w_t + sum_k (n_k / N) (w_k - w_t), N = sum_k n_k.
/// An empty update list returns w_t. Throws ProtocolError on shape mismatch.
nn::ModelParams fedavg_aggregate(const nn::ModelParams& global, std::span<const LocalUpdate> updates);

// Zeroes entries with |v| < threshold (strict).
nn::ModelParams prune(const nn::ModelParams& params, double threshold);

struct CompressionConfig {
  int quant_bits = 8;
  double prune_threshold = 0.001;
  // Deflate the 8-bit code section of the wire blob.
  bool entropy_coding = true;

  void validate() const;
};

struct QuantizedTensor {
  std::string name;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  double min = 0.0;
  double scale = 0.0;  // (max - min) / 255, zero for constant tensors
  std::vector<std::uint8_t> codes;  // row-major
};

struct QuantizedBlob {
  std::uint32_t round = 0;
  NodeId node_id = 0;
  std::vector<QuantizedTensor> tensors;
};

// Per-tensor affine 8-bit quantization: code = round((v - min) / scale).
QuantizedBlob quantize8(const nn::ModelParams& params, std::uint32_t round = 0, NodeId node_id = 0);
// Rebuilds params with the manifest of `config`; throws ProtocolError when
// the blob does not match it.
nn::ModelParams dequantize(const QuantizedBlob& blob, const nn::ModelConfig& config);

// Wire format: "FGNQ", version, round, node id, flags, tensor records
// (name, rows, cols, min, scale), then the code section (raw or deflated).
std::vector<std::uint8_t> encode(const QuantizedBlob& blob, bool entropy_coding);
QuantizedBlob decode(std::span<const std::uint8_t> bytes);

/// Everything that crosses a node boundary goes through this channel. It
/// only accepts model payloads, never samples.
class Channel {
 public:
  enum class Kind { quantized_update, global_broadcast };
  struct Record {
    Kind kind;
    NodeId peer;
    std::size_t bytes;
  };

  // Uplink: returns the bytes the aggregator receives.
  std::vector<std::uint8_t> send_update(const QuantizedBlob& blob, bool entropy_coding);
  // Downlink: returns the params each node receives.
  nn::ModelParams broadcast(const nn::ModelParams& global, NodeId to);

  const std::vector<Record>& records() const { return records_; }

 private:
  std::vector<Record> records_;
};

struct RoundState {
  long long round = 0;
  nn::ModelParams global;
  int sync_interval = 5;
  TrainConfig train;
  bool persist_optimizer = false;

  void validate() const;
};

struct FlNode {
  NodeId id = 0;
  bool alive = true;
  std::span<const Sample> data;
  nn::ModelParams local;  // starts from the last broadcast global
  std::optional<nn::OptimizerState> opt;
};

struct RoundLog {
  long long round = 0;
  std::vector<NodeId> participants;
  std::vector<NodeId> skipped;  // dead or without data
  std::size_t raw_bytes = 0;         // float32 blobs the updates would have cost
  std::size_t compressed_bytes = 0;  // bytes actually sent
  bool rebroadcast = false;
  bool aggregated = false;
};

struct RoundOutcome {
  RoundState state;
  RoundLog log;
};

// One federated round: live nodes train locally, updates are pruned,
// quantized, sent, decoded and aggregated. Every sync_interval rounds the
// global model is broadcast back to live nodes. Node local models are
// updated in place.
RoundOutcome run_round(const RoundState& state, std::span<FlNode> nodes, const CompressionConfig& compression,
                       std::uint64_t seed, Channel* channel = nullptr);

}  // namespace fognite::fed
