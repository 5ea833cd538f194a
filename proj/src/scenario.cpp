#include "fognite/scenario.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace fognite {

namespace {

using Json = nlohmann::json;
using Check = std::function<std::optional<std::string>(double)>;

Check positive() {
  return [](double v) -> std::optional<std::string> {
    if (v > 0.0) return std::nullopt;
    return "must be > 0";
  };
}
Check non_negative() {
  return [](double v) -> std::optional<std::string> {
    if (v >= 0.0) return std::nullopt;
    return "must be >= 0";
  };
}
Check unit() {
  return [](double v) -> std::optional<std::string> {
    if (v >= 0.0 && v <= 1.0) return std::nullopt;
    return "must lie in [0, 1]";
  };
}
Check unit_open() {
  return [](double v) -> std::optional<std::string> {
    if (v >= 0.0 && v < 1.0) return std::nullopt;
    return "must lie in [0, 1)";
  };
}
Check equals(double x) {
  return [x](double v) -> std::optional<std::string> {
    if (v == x) return std::nullopt;
    std::ostringstream os;
    os << "must equal " << x;
    return os.str();
  };
}
Check none() {
  return [](double) -> std::optional<std::string> { return std::nullopt; };
}

// Field visitors. Each config struct lists its fields once in visit();
// the reader, writer and validator below walk that list.

template <class V>
void visit(V& v, Range& r, const Check& each) {
  v.field("lo", r.lo, each);
  v.field("hi", r.hi, each);
  v.relation(r.lo <= r.hi, "lo must not exceed hi");
}

template <class V>
void visit(V& v, nn::ModelConfig& c) {
  v.field("window", c.window, positive());
  v.field("conv_filters", c.conv_filters, positive());
  v.field("kernel", c.kernel, positive());
  v.field("stride", c.stride, positive());
  v.field("pool", c.pool, positive());
  v.field("lstm_hidden", c.lstm_hidden, positive());
  v.field("bidirectional", c.bidirectional);
  v.field("dropout_rate", c.dropout_rate, unit_open());
  v.field("dense", c.dense, positive());
  v.relation(c.kernel <= c.window, "kernel must not exceed window");
  v.relation(c.kernel > c.window || c.pool <= 0 || c.stride <= 0 || c.seq_length() >= 1,
             "window too short for kernel and pool");
}

template <class V>
void visit(V& v, NodesConfig& c) {
  v.field("count", c.count, positive());
  v.object("cpu_capacity", c.cpu_capacity, positive());
  v.object("mem_capacity", c.mem_capacity, positive());
  v.object("base_latency_ms", c.base_latency_ms, non_negative());
  v.object("failure_prob", c.failure_prob, unit());
  v.object("power_rate", c.power_rate, non_negative());
  v.object("idle_power", c.idle_power, non_negative());
  v.object("battery_level", c.battery_level, unit());
  v.object("renewable_peak", c.renewable_peak, unit());
  v.field("renewable_steps", c.renewable_steps, positive());
  v.field("thermal_smoothing", c.thermal_smoothing, unit());
  v.field("thermal_risk", c.thermal_risk, non_negative());
}

template <class V>
void visit(V& v, LinksConfig& c) {
  v.object("delay_ms", c.delay_ms, non_negative());
  v.object("loss_rate", c.loss_rate, unit());
  v.object("failure_prob", c.failure_prob, unit());
  v.field("chords", c.chords, non_negative());
}

template <class V>
void visit(V& v, MetersConfig& c) {
  v.field("count", c.count, positive());
  v.field("rate_hz", c.rate_hz, positive());
  v.field("base_kw", c.base_kw, non_negative());
  v.field("daily_amplitude", c.daily_amplitude, non_negative());
  v.field("appliances", c.appliances, non_negative());
  v.field("appliance_kw", c.appliance_kw, non_negative());
  v.field("appliance_period_ms", c.appliance_period_ms, positive());
  v.field("appliance_duty", c.appliance_duty, unit());
  v.field("noise", c.noise, non_negative());
  v.field("gap_fraction", c.gap_fraction, unit_open());
  v.field("holdout_fraction", c.holdout_fraction, unit_open());
}

template <class V>
void visit(V& v, WorkloadConfig& c) {
  v.field("tasks", c.tasks, non_negative());
  v.field("cpu_demand_mean", c.cpu_demand_mean, positive());
  v.field("mem_demand_mean", c.mem_demand_mean, non_negative());
  v.field("data_size_mean_kb", c.data_size_mean_kb, non_negative());
  v.object("deadline_slack_ms", c.deadline_slack_ms, positive());
}

template <class V>
void visit(V& v, TimeConfig& c) {
  v.field("duration_ms", c.duration_ms, positive());
  v.field("report_tick_ms", c.report_tick_ms, positive());
  v.field("compressed_hours", c.compressed_hours, positive());
  v.field("days", c.days, positive());
}

template <class V>
void visit(V& v, FederatedConfig& c) {
  v.field("enabled", c.enabled);
  v.object("model", c.model);
  v.field("epochs", c.epochs, non_negative());
  v.field("batch_size", c.batch_size, positive());
  v.field("sync_interval", c.sync_interval, positive());
  v.field("round_interval_ms", c.round_interval_ms, positive());
  v.field("learning_rate", c.learning_rate, positive());
  v.field("lambda", c.lambda, non_negative());
  v.field("max_samples_per_round", c.max_samples_per_round, positive());
  v.field("eval_samples", c.eval_samples, positive());
  v.field("persist_optimizer", c.persist_optimizer);
}

template <class V>
void visit(V& v, fed::CompressionConfig& c) {
  v.field("quant_bits", c.quant_bits, equals(8));
  v.field("prune_threshold", c.prune_threshold, non_negative());
  v.field("entropy_coding", c.entropy_coding);
}

template <class V>
void visit(V& v, rl::RewardWeights& c) {
  v.field("alpha", c.alpha, non_negative());
  v.field("beta", c.beta, non_negative());
  v.field("gamma_util", c.gamma_util, non_negative());
  v.relation(c.alpha + c.beta + c.gamma_util > 0.0, "weights must have a positive sum");
}

template <class V>
void visit(V& v, rl::StateNorms& c) {
  v.field("max_queue", c.max_queue, positive());
  v.field("latency_norm_ms", c.latency_norm_ms, positive());
  v.field("service_norm_s", c.service_norm_s, positive());
  v.field("slack_norm_ms", c.slack_norm_ms, positive());
  v.field("data_norm_kb", c.data_norm_kb, positive());
}

template <class V>
void visit(V& v, RlConfig& c) {
  v.field("learning_rate", c.learning_rate, positive());
  v.field("gamma", c.gamma, unit());
  v.field("entropy_coeff", c.entropy_coeff, non_negative());
  v.field("clip", c.clip, positive());
  v.field("value_coeff", c.value_coeff, non_negative());
  v.field("epochs", c.epochs, positive());
  v.field("minibatch", c.minibatch, positive());
  v.field("batch_steps", c.batch_steps, positive());
  v.field("train_episodes", c.train_episodes, non_negative());
  v.object("weights", c.weights);
  v.field("reject_penalty", c.reject_penalty, non_negative());
  v.field("per_node_learners", c.per_node_learners);
  v.field("greedy_eval", c.greedy_eval);
  v.object("norms", c.norms);
}

template <class V>
void visit(V& v, twin::PerturbationConfig& c) {
  v.field("cpu_jitter", c.cpu_jitter, unit_open());
  v.field("delay_min_ms", c.delay_min_ms, non_negative());
  v.field("delay_max_ms", c.delay_max_ms, non_negative());
  v.field("loss_min", c.loss_min, unit());
  v.field("loss_max", c.loss_max, unit());
  v.field("replicas", c.replicas, positive());
  v.field("max_retries", c.max_retries, non_negative());
  v.relation(c.delay_min_ms <= c.delay_max_ms, "delay_min_ms must not exceed delay_max_ms");
  v.relation(c.loss_min <= c.loss_max, "loss_min must not exceed loss_max");
}

template <class V>
void visit(V& v, TwinConfig& c) {
  v.field("enabled", c.enabled);
  v.object("perturbation", c.perturbation);
  v.field("max_latency_ms", c.max_latency_ms, positive());
  v.field("max_energy", c.max_energy, positive());
  v.field("max_p_fail", c.max_p_fail, positive());
  v.field("max_utilization", c.max_utilization, positive());
}

template <class V>
void visit(V& v, FaultEntry& c) {
  v.field("node", c.node, non_negative());
  v.field("at_ms", c.at_ms, non_negative());
  v.field("downtime_ms", c.downtime_ms, non_negative());
}

template <class V>
void visit(V& v, FaultsConfig& c) {
  v.field("count", c.count, non_negative());
  v.object("downtime_ms", c.downtime_ms, non_negative());
  v.field("detection_ms", c.detection_ms, non_negative());
  v.field("bandwidth_kbps", c.bandwidth_kbps, positive());
  v.array("plan", c.plan);
}

template <class V>
void visit(V& v, CloudConfig& c) {
  v.field("latency_ms", c.latency_ms, non_negative());
  v.field("cpu_capacity", c.cpu_capacity, positive());
  v.field("power_rate", c.power_rate, non_negative());
}

template <class V>
void visit(V& v, ScenarioConfig& c) {
  v.field("seeds", c.seeds);
  v.object("nodes", c.nodes);
  v.object("links", c.links);
  v.object("meters", c.meters);
  v.object("workload", c.workload);
  v.object("time", c.time);
  v.object("federated", c.federated);
  v.object("compression", c.compression);
  v.object("rl", c.rl);
  v.object("twin", c.twin);
  v.object("faults", c.faults);
  v.object("cloud", c.cloud);
  v.field("output_dir", c.output_dir);
}

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

class Reader {
 public:
  Reader(const Json& node, std::string path, std::vector<std::string>& errors)
      : node_(node), path_(std::move(path)), errors_(errors) {}

  template <class T>
  void field(const char* key, T& out, const Check& = none()) {
    seen_.insert(key);
    if (!node_.contains(key)) return;
    const Json& j = node_.at(key);
    const std::string where = join(path_, key);
    try {
      read(j, out, where);
    } catch (const Json::exception&) {
      errors_.push_back(where + ": wrong type");
    }
  }

  template <class T>
  void object(const char* key, T& out) {
    seen_.insert(key);
    if (!node_.contains(key)) return;
    const std::string where = join(path_, key);
    const Json& j = node_.at(key);
    if (!j.is_object()) {
      errors_.push_back(where + ": expected an object");
      return;
    }
    Reader sub(j, where, errors_);
    visit(sub, out);
    sub.finish();
  }

  void object(const char* key, Range& out, const Check& each) {
    seen_.insert(key);
    if (!node_.contains(key)) return;
    const std::string where = join(path_, key);
    const Json& j = node_.at(key);
    if (!j.is_object()) {
      errors_.push_back(where + ": expected an object with lo/hi");
      return;
    }
    Reader sub(j, where, errors_);
    visit(sub, out, each);
    sub.finish();
  }

  template <class T>
  void array(const char* key, std::vector<T>& out) {
    seen_.insert(key);
    if (!node_.contains(key)) return;
    const std::string where = join(path_, key);
    const Json& j = node_.at(key);
    if (!j.is_array()) {
      errors_.push_back(where + ": expected an array");
      return;
    }
    out.clear();
    for (std::size_t i = 0; i < j.size(); ++i) {
      const std::string item = where + "[" + std::to_string(i) + "]";
      if (!j[i].is_object()) {
        errors_.push_back(item + ": expected an object");
        continue;
      }
      T value{};
      Reader sub(j[i], item, errors_);
      visit(sub, value);
      sub.finish();
      out.push_back(value);
    }
  }

  void relation(bool, const char*) {}

  void finish() {
    for (const auto& [key, _] : node_.items()) {
      if (!seen_.count(key)) errors_.push_back(join(path_, key) + ": unknown key");
    }
  }

 private:
  template <class T>
  void read(const Json& j, T& out, const std::string& where) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!j.is_boolean()) throw Json::type_error::create(302, "bool", &j);
      out = j.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!j.is_number_integer()) throw Json::type_error::create(302, "int", &j);
      out = j.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!j.is_number()) throw Json::type_error::create(302, "number", &j);
      out = j.get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!j.is_string()) throw Json::type_error::create(302, "string", &j);
      out = j.get<std::string>();
    } else if constexpr (std::is_same_v<T, std::optional<double>>) {
      if (j.is_null()) {
        out.reset();
      } else {
        double v = 0.0;
        read(j, v, where);
        out = v;
      }
    } else {
      if (!j.is_array()) throw Json::type_error::create(302, "array", &j);
      out.clear();
      for (const auto& e : j) {
        typename T::value_type v{};
        read(e, v, where);
        out.push_back(v);
      }
    }
  }

  const Json& node_;
  std::string path_;
  std::vector<std::string>& errors_;
  std::set<std::string> seen_;
};

class Writer {
 public:
  Json out = Json::object();

  template <class T>
  void field(const char* key, T& value, const Check& = none()) {
    if constexpr (std::is_same_v<T, std::optional<double>>) {
      out[key] = value ? Json(*value) : Json(nullptr);
    } else {
      out[key] = value;
    }
  }
  template <class T>
  void object(const char* key, T& value) {
    Writer sub;
    visit(sub, value);
    out[key] = std::move(sub.out);
  }
  void object(const char* key, Range& value, const Check& each) {
    Writer sub;
    visit(sub, value, each);
    out[key] = std::move(sub.out);
  }
  template <class T>
  void array(const char* key, std::vector<T>& values) {
    Json arr = Json::array();
    for (auto& v : values) {
      Writer sub;
      visit(sub, v);
      arr.push_back(std::move(sub.out));
    }
    out[key] = std::move(arr);
  }
  void relation(bool, const char*) {}
};

class Validator {
 public:
  Validator(std::string path, std::vector<std::string>& errors) : path_(std::move(path)), errors_(errors) {}

  template <class T>
  void field(const char* key, T& value, const Check& check = none()) {
    const std::string where = join(path_, key);
    if constexpr (std::is_same_v<T, bool> || std::is_same_v<T, std::string>) {
      (void)value;
    } else if constexpr (std::is_arithmetic_v<T>) {
      apply(where, static_cast<double>(value), check);
    } else if constexpr (std::is_same_v<T, std::optional<double>>) {
      if (value) apply(where, *value, check);
    } else {
      for (std::size_t i = 0; i < value.size(); ++i) {
        apply(where + "[" + std::to_string(i) + "]", static_cast<double>(value[i]), check);
      }
    }
  }
  template <class T>
  void object(const char* key, T& value) {
    Validator sub(join(path_, key), errors_);
    visit(sub, value);
  }
  void object(const char* key, Range& value, const Check& each) {
    Validator sub(join(path_, key), errors_);
    visit(sub, value, each);
  }
  template <class T>
  void array(const char* key, std::vector<T>& values) {
    for (std::size_t i = 0; i < values.size(); ++i) {
      Validator sub(join(path_, key) + "[" + std::to_string(i) + "]", errors_);
      visit(sub, values[i]);
    }
  }
  void relation(bool ok, const char* message) {
    if (!ok) errors_.push_back((path_.empty() ? std::string("config") : path_) + ": " + message);
  }

 private:
  void apply(const std::string& where, double v, const Check& check) {
    if (!std::isfinite(v)) {
      errors_.push_back(where + ": must be finite");
      return;
    }
    if (auto msg = check(v)) errors_.push_back(where + ": " + *msg);
  }

  std::string path_;
  std::vector<std::string>& errors_;
};

std::string summarize(const std::vector<std::string>& problems) {
  std::string s = "invalid scenario config:";
  for (const auto& p : problems) s += "\n  " + p;
  return s;
}

}  // namespace

bool RlConfig::operator==(const RlConfig& o) const {
  return emit_config([&] {
           ScenarioConfig c;
           c.rl = *this;
           return c;
         }())
             .at("rl") ==
         emit_config([&] {
           ScenarioConfig c;
           c.rl = o;
           return c;
         }())
             .at("rl");
}

bool TwinConfig::operator==(const TwinConfig& o) const {
  ScenarioConfig a, b;
  a.twin = *this;
  b.twin = o;
  return emit_config(a).at("twin") == emit_config(b).at("twin");
}

bool ScenarioConfig::operator==(const ScenarioConfig& o) const { return emit_config(*this) == emit_config(o); }

ConfigErrors::ConfigErrors(std::vector<std::string> problems)
    : std::runtime_error(summarize(problems)), problems_(std::move(problems)) {}

std::vector<std::string> validate_config(const ScenarioConfig& config) {
  std::vector<std::string> errors;
  ScenarioConfig copy = config;
  Validator v("", errors);
  visit(v, copy);
  if (copy.seeds.empty()) errors.push_back("seeds: need at least one seed");
  for (std::size_t i = 0; i < copy.faults.plan.size(); ++i) {
    const auto& f = copy.faults.plan[i];
    const std::string where = "faults.plan[" + std::to_string(i) + "]";
    if (f.node >= copy.nodes.count) errors.push_back(where + ".node: no such node");
    if (f.at_ms > copy.time.duration_ms) errors.push_back(where + ".at_ms: after the end of the run");
  }
  if (copy.output_dir.empty()) errors.push_back("output_dir: must not be empty");
  return errors;
}

ScenarioConfig parse_config(const Json& doc) {
  ScenarioConfig cfg;
  std::vector<std::string> errors;
  if (doc.is_null()) return cfg;
  if (!doc.is_object()) throw ConfigErrors({"config: top level must be an object"});
  Reader r(doc, "", errors);
  visit(r, cfg);
  r.finish();
  auto semantic = validate_config(cfg);
  errors.insert(errors.end(), semantic.begin(), semantic.end());
  if (!errors.empty()) throw ConfigErrors(errors);
  return cfg;
}

ScenarioConfig parse_config_text(const std::string& text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return ScenarioConfig{};
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigErrors({std::string("config: not valid JSON: ") + e.what()});
  }
  return parse_config(doc);
}

ScenarioConfig parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigErrors({path.string() + ": cannot open config file"});
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

nlohmann::json emit_config(const ScenarioConfig& config) {
  ScenarioConfig copy = config;
  Writer w;
  visit(w, copy);
  return w.out;
}

ScenarioConfig quick_preset(ScenarioConfig base) {
  base.workload.tasks = 150;
  base.time.duration_ms = 30'000.0;
  base.time.report_tick_ms = 2'500.0;
  base.faults.count = 2;
  base.federated.round_interval_ms = 6'000.0;
  base.federated.max_samples_per_round = 32;
  base.federated.eval_samples = 128;
  base.rl.train_episodes = 4;
  return base;
}

}  // namespace fognite
