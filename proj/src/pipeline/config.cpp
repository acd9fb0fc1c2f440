#include "drivelab/pipeline/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "drivelab/model/observation.hpp"

namespace drivelab::pipeline {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double parse_double(const std::string& key, const std::string& s) {
  double v = 0.0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw ConfigError("config: " + key + " expects a number, got '" + s + "'");
  }
  return v;
}

std::uint64_t parse_u64(const std::string& key, const std::string& s) {
  std::uint64_t v = 0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw ConfigError("config: " + key + " expects a non-negative integer, got '" + s + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("config: " + key + " expects true or false, got '" + s + "'");
}

std::vector<std::size_t> parse_sizes(const std::string& key, const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) out.push_back(parse_u64(key, trim(part)));
  if (out.empty()) throw ConfigError("config: " + key + " expects a comma-separated list of sizes");
  return out;
}

std::string fmt_sizes(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Binding {
  std::string key;
  bool structural;
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

Binding make_binding(const std::string& key, double& v, bool structural = false) {
  return {key, structural, [&v] { return fmt(v); }, [&v, key](const std::string& s) { v = parse_double(key, s); }};
}
Binding make_binding(const std::string& key, std::size_t& v, bool structural = false) {
  return {key, structural, [&v] { return std::to_string(v); },
          [&v, key](const std::string& s) { v = static_cast<std::size_t>(parse_u64(key, s)); }};
}
Binding make_binding_u64(const std::string& key, std::uint64_t& v) {
  return {key, false, [&v] { return std::to_string(v); }, [&v, key](const std::string& s) { v = parse_u64(key, s); }};
}
Binding make_binding(const std::string& key, int& v) {
  return {key, false, [&v] { return std::to_string(v); },
          [&v, key](const std::string& s) {
            const std::uint64_t u = parse_u64(key, s);
            if (u > 1000000000ull) throw ConfigError("config: " + key + " is too large");
            v = static_cast<int>(u);
          }};
}
Binding make_binding(const std::string& key, bool& v) {
  return {key, false, [&v] { return std::string(v ? "true" : "false"); },
          [&v, key](const std::string& s) { v = parse_bool(key, s); }};
}
Binding make_binding(const std::string& key, std::vector<std::size_t>& v, bool structural) {
  return {key, structural, [&v] { return fmt_sizes(v); }, [&v, key](const std::string& s) { v = parse_sizes(key, s); }};
}

std::vector<Binding> bindings(TrainConfig& c) {
  std::vector<Binding> b{
      make_binding("train.lr_model", c.lr_model),
      make_binding("train.lr_policy", c.agent.actor_lr),
      make_binding("train.lr_value", c.agent.critic_lr),
      make_binding("train.lr_ensemble", c.ensemble.lr),
      make_binding("train.batch", c.batch),
      make_binding("train.seq_len", c.seq_len),
      make_binding("train.capacity", c.capacity),
      make_binding("train.gamma", c.agent.gamma),
      make_binding("train.alpha_explore", c.alpha_explore),
      make_binding("train.alpha_finetune", c.alpha_finetune),
      make_binding("train.n_explore", c.n_explore),
      make_binding("train.n_fine", c.n_fine),
      make_binding("train.chunk", c.chunk),
      make_binding("train.train_ratio", c.train_ratio),
      make_binding("train.train_ratio_finetune", c.train_ratio_finetune),
      make_binding("train.prefill", c.prefill),
      make_binding("train.imagine_starts", c.imagine_starts),
      make_binding("train.grad_clip", c.grad_clip),
      make_binding("train.log_every", c.log_every),
      make_binding("train.checkpoint_every", c.checkpoint_every),
      make_binding_u64("train.seed", c.seed),
      {"train.task", false, [&c] { return sim::task_name(c.task); },
       [&c](const std::string& s) {
         try {
           c.task = sim::parse_task(s);
         } catch (const std::exception&) {
           throw ConfigError("config: train.task expects LF, CA or LF+CA, got '" + s + "'");
         }
       }},
      make_binding("eval.steps", c.eval_steps),
      make_binding_u64("eval.seed", c.eval_seed),
      {"layout.family", false, [&c] { return std::string(1, static_cast<char>(c.family)); },
       [&c](const std::string& s) {
         try {
           c.family = sim::parse_family(s);
         } catch (const std::exception&) {
           throw ConfigError("config: layout.family expects A or B, got '" + s + "'");
         }
       }},
      make_binding_u64("layout.seed", c.layout_seed),
      make_binding("env.dt", c.env.dt),
      make_binding("env.wheelbase", c.env.wheelbase),
      make_binding("env.v_max", c.env.v_max),
      make_binding("env.a_max", c.env.a_max),
      make_binding("env.max_steer", c.env.max_steer),
      make_binding("env.horizon", c.env.horizon),
      make_binding("env.stall_speed", c.env.stall_speed),
      make_binding("env.stall_steps", c.env.stall_steps),
      make_binding("env.wrong_way_angle_deg", c.env.wrong_way_angle_deg),
      make_binding("env.wrong_way_steps", c.env.wrong_way_steps),
      make_binding("env.ego_radius", c.env.ego_radius),
      make_binding("env.vehicle_half_width", c.env.vehicle_half_width),
      make_binding("env.spawn_speed", c.env.spawn_speed),
      make_binding("env.randomization_period", c.env.randomization_period),
      make_binding("env.lane_width", c.env.lane_width),
      make_binding("env.margin", c.env.margin),
      make_binding("env.obstacle_density", c.env.obstacle_density),
      make_binding("model.deter", c.model.deter, true),
      make_binding("model.stoch", c.model.stoch, true),
      make_binding("model.embed", c.model.embed, true),
      make_binding("model.hidden", c.model.hidden, true),
      make_binding("model.decoder_hidden", c.model.decoder_hidden, true),
      make_binding("model.beta", c.model.beta),
      make_binding("model.free_bits", c.model.free_bits),
      make_binding("model.cont_weight", c.model.cont_weight),
      make_binding("model.std_floor", c.model.std_floor),
      make_binding("ensemble.members", c.ensemble.members, true),
      make_binding("ensemble.hidden", c.ensemble.hidden, true),
      make_binding("agent.hidden", c.agent.hidden, true),
      make_binding("agent.horizon", c.agent.horizon),
      make_binding("agent.lambda", c.agent.lambda),
      make_binding("agent.entropy_weight", c.agent.entropy_weight),
      make_binding("agent.steer_penalty", c.agent.steer_penalty),
      make_binding("agent.steer_threshold", c.agent.steer_threshold),
      make_binding("agent.penalty_in_explore", c.agent.penalty_in_explore),
      make_binding("agent.penalty_in_finetune", c.agent.penalty_in_finetune),
  };
  return b;
}

const Binding& find(const std::vector<Binding>& bs, const std::string& key) {
  for (const auto& b : bs) {
    if (b.key == key) return b;
  }
  throw ConfigError("config: unknown key '" + key + "'");
}

}  // namespace

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

model::ModelConfig TrainConfig::default_model() { return model::sim_model_config(); }

agent::AgentConfig TrainConfig::default_agent() { return agent::AgentConfig{}; }

sim::LayoutParams TrainConfig::layout_params() const {
  return {env.lane_width, env.margin, env.obstacle_density};
}

void TrainConfig::validate() const {
  if (lr_model < 0.0 || agent.actor_lr < 0.0 || agent.critic_lr < 0.0 || ensemble.lr < 0.0) {
    throw ConfigError("config: learning rates must be non-negative");
  }
  if (batch == 0 || seq_len < 2) throw ConfigError("config: train.batch must be >= 1 and train.seq_len >= 2");
  if (capacity < static_cast<std::size_t>(env.horizon) + 1) {
    throw ConfigError("config: train.capacity must hold at least one full episode (env.horizon + 1)");
  }
  if (alpha_explore < 0.0 || alpha_explore > 1.0 || alpha_finetune < 0.0 || alpha_finetune > 1.0) {
    throw ConfigError("config: train.alpha_explore and train.alpha_finetune must lie in [0, 1]");
  }
  if (chunk == 0) throw ConfigError("config: train.chunk must be positive");
  if (train_ratio < 0.0 || train_ratio_finetune < 0.0) {
    throw ConfigError("config: train.train_ratio and train.train_ratio_finetune must be non-negative");
  }
  if (eval_steps == 0) throw ConfigError("config: eval.steps must be positive");
  if (log_every == 0) throw ConfigError("config: train.log_every must be positive");
  if (env.horizon < 1 || env.randomization_period < 0) throw ConfigError("config: invalid env horizon or period");
  try {
    model.validate();
    ensemble.validate();
    agent.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

std::vector<std::string> TrainConfig::keys() const {
  std::vector<std::string> out;
  for (const auto& b : bindings(const_cast<TrainConfig&>(*this))) out.push_back(b.key);
  return out;
}

std::string TrainConfig::to_text() const {
  std::string out;
  for (const auto& b : bindings(const_cast<TrainConfig&>(*this))) out += b.key + " = " + b.get() + "\n";
  return out;
}

std::uint64_t TrainConfig::fingerprint() const {
  std::string s;
  for (const auto& b : bindings(const_cast<TrainConfig&>(*this))) {
    if (b.structural) s += b.key + "=" + b.get() + "\n";
  }
  s += "frames=" + std::to_string(model.frames) + " grid=" + std::to_string(model.grid) +
       " classes=" + std::to_string(model.classes) + " action=" + std::to_string(model.action_dim) + "\n";
  return fnv1a(s.data(), s.size());
}

void TrainConfig::set(const std::string& key, const std::string& value) {
  auto bs = bindings(*this);
  find(bs, key).set(value);
}

std::string TrainConfig::get(const std::string& key) const {
  auto bs = bindings(const_cast<TrainConfig&>(*this));
  return find(bs, key).get();
}

TrainConfig parse_config(const std::string& text, TrainConfig base) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    try {
      base.set(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  base.validate();
  return base;
}

TrainConfig load_config(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot open " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

}  // namespace drivelab::pipeline
