#include "ecgi/neuralnet.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "ecgi/common.hpp"

namespace ecgi::nn {

using nlohmann::json;

void NetworkSpec::validate() const {
  if (input_width < 1 || hidden_width < 1 || output_width < 1)
    throw std::invalid_argument("NetworkSpec: widths must be >= 1");
  if (hidden_layers < 1) throw std::invalid_argument("NetworkSpec: need at least one hidden layer");
}

int NetworkSpec::parameter_count() const {
  int count = input_width * hidden_width + hidden_width;
  for (int l = 1; l < hidden_layers; ++l) count += hidden_width * hidden_width + hidden_width;
  count += hidden_width * output_width + output_width;
  return count;
}

InputScaling InputScaling::from_bounds(const std::vector<double>& lo, const std::vector<double>& hi) {
  if (lo.size() != hi.size()) throw std::invalid_argument("InputScaling: bound sizes differ");
  InputScaling s;
  s.enabled = true;
  s.lo = lo;
  s.hi = hi;
  for (std::size_t i = 0; i < lo.size(); ++i)
    if (!(hi[i] > lo[i])) throw std::invalid_argument("InputScaling: need hi > lo per axis");
  return s;
}

void AdamConfig::validate() const {
  if (learning_rate <= 0 || epsilon <= 0) throw std::invalid_argument("AdamConfig: alpha, epsilon must be positive");
  if (beta1 <= 0 || beta1 >= 1 || beta2 <= 0 || beta2 >= 1)
    throw std::invalid_argument("AdamConfig: betas must lie in (0, 1)");
}

namespace {

std::vector<std::pair<int, int>> layer_shapes(const NetworkSpec& spec) {
  std::vector<std::pair<int, int>> shapes;  // (fan_out, fan_in)
  int fan_in = spec.input_width;
  for (int l = 0; l < spec.hidden_layers; ++l) {
    shapes.emplace_back(spec.hidden_width, fan_in);
    fan_in = spec.hidden_width;
  }
  shapes.emplace_back(spec.output_width, fan_in);
  return shapes;
}

}  // namespace

NetworkState init_network(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  NetworkState st;
  st.spec = spec;
  st.init_seed = seed;
  st.step = 0;

  auto rng = make_rng(seed, hash_name("glorot_init"));
  for (auto [fan_out, fan_in] : layer_shapes(spec)) {
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Eigen::MatrixXd w(fan_out, fan_in);
    for (int i = 0; i < fan_out; ++i)
      for (int j = 0; j < fan_in; ++j) w(i, j) = dist(rng);
    st.weights.push_back(w);
    st.biases.push_back(Eigen::VectorXd::Zero(fan_out));
    st.m_w.push_back(Eigen::MatrixXd::Zero(fan_out, fan_in));
    st.v_w.push_back(Eigen::MatrixXd::Zero(fan_out, fan_in));
    st.m_b.push_back(Eigen::VectorXd::Zero(fan_out));
    st.v_b.push_back(Eigen::VectorXd::Zero(fan_out));
  }
  return st;
}

Eigen::VectorXd NetworkState::flatten_params() const {
  Eigen::VectorXd flat(spec.parameter_count());
  int at = 0;
  for (int l = 0; l < layer_count(); ++l) {
    for (int i = 0; i < weights[l].rows(); ++i)
      for (int j = 0; j < weights[l].cols(); ++j) flat[at++] = weights[l](i, j);
    for (int i = 0; i < biases[l].size(); ++i) flat[at++] = biases[l][i];
  }
  return flat;
}

void NetworkState::unflatten_params(const Eigen::VectorXd& flat) {
  if (flat.size() != spec.parameter_count())
    throw std::invalid_argument("unflatten_params: size mismatch");
  int at = 0;
  for (int l = 0; l < layer_count(); ++l) {
    for (int i = 0; i < weights[l].rows(); ++i)
      for (int j = 0; j < weights[l].cols(); ++j) weights[l](i, j) = flat[at++];
    for (int i = 0; i < biases[l].size(); ++i) biases[l][i] = flat[at++];
  }
}

namespace {

Eigen::VectorXd apply_scaling(const InputScaling& s, const Eigen::VectorXd& x) {
  if (!s.enabled) return x;
  if (static_cast<std::size_t>(x.size()) != s.lo.size())
    throw std::invalid_argument("InputScaling: coordinate width mismatch");
  Eigen::VectorXd out(x.size());
  for (int i = 0; i < x.size(); ++i)
    out[i] = 2.0 * (x[i] - s.lo[i]) / (s.hi[i] - s.lo[i]) - 1.0;
  return out;
}

}  // namespace

Eigen::MatrixXd forward(const NetworkState& state, const Eigen::MatrixXd& coords) {
  if (coords.cols() != state.spec.input_width)
    throw std::invalid_argument("forward: coordinate width mismatch");
  Eigen::MatrixXd out(coords.rows(), state.spec.output_width);
  for (int r = 0; r < coords.rows(); ++r) {
    Eigen::VectorXd act = apply_scaling(state.scaling, coords.row(r).transpose());
    for (int l = 0; l < state.layer_count(); ++l) {
      act = (state.weights[l] * act + state.biases[l]).eval();
      if (l + 1 < state.layer_count()) act = act.array().tanh().matrix();
    }
    out.row(r) = act.transpose();
  }
  return out;
}

NetworkState adam_step(const NetworkState& state, const Eigen::VectorXd& grads, const AdamConfig& cfg) {
  cfg.validate();
  if (grads.size() != state.spec.parameter_count())
    throw std::invalid_argument("adam_step: gradient size mismatch");

  NetworkState next = state;
  next.step = state.step + 1;
  const double t = static_cast<double>(next.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);

  int at = 0;
  for (int l = 0; l < next.layer_count(); ++l) {
    auto update = [&](double& theta, double& m, double& v, double g, const char* block) {
      if (!std::isfinite(g))
        throw std::runtime_error(std::string("adam_step: non-finite gradient in layer ") +
                                 std::to_string(l) + " " + block);
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
      theta -= cfg.learning_rate * (m / bc1) / (std::sqrt(v / bc2) + cfg.epsilon);
    };
    for (int i = 0; i < next.weights[l].rows(); ++i)
      for (int j = 0; j < next.weights[l].cols(); ++j, ++at)
        update(next.weights[l](i, j), next.m_w[l](i, j), next.v_w[l](i, j), grads[at], "weights");
    for (int i = 0; i < next.biases[l].size(); ++i, ++at)
      update(next.biases[l][i], next.m_b[l][i], next.v_b[l][i], grads[at], "biases");
  }
  return next;
}

Eigen::VectorXd accumulate_sharded(const std::vector<std::pair<Eigen::VectorXd, std::size_t>>& shard_grads) {
  if (shard_grads.empty()) throw std::invalid_argument("accumulate_sharded: empty shard list");
  Eigen::VectorXd total = Eigen::VectorXd::Zero(shard_grads.front().first.size());
  std::size_t count = 0;
  for (const auto& [g, n] : shard_grads) {
    if (g.size() != total.size()) throw std::invalid_argument("accumulate_sharded: shard shape mismatch");
    total += g;
    count += n;
  }
  if (count == 0) throw std::invalid_argument("accumulate_sharded: total shard size is zero");
  return total / static_cast<double>(count);
}

TapedNetwork TapedNetwork::make(ad::Tape& tape, const NetworkState& state) {
  TapedNetwork net;
  net.state = &state;
  net.tape = &tape;
  const Eigen::VectorXd flat = state.flatten_params();
  net.params.reserve(flat.size());
  for (int i = 0; i < flat.size(); ++i) net.params.push_back(tape.input(flat[i]));
  return net;
}

std::vector<ad::VarRef> TapedNetwork::forward(std::span<const ad::VarRef> coords) const {
  const NetworkSpec& spec = state->spec;
  if (static_cast<int>(coords.size()) != spec.input_width)
    throw std::invalid_argument("TapedNetwork::forward: coordinate width mismatch");
  ad::Tape& tp = *tape;

  std::vector<ad::VarRef> act(coords.begin(), coords.end());
  if (state->scaling.enabled) {
    for (int i = 0; i < spec.input_width; ++i) {
      const double s = 2.0 / (state->scaling.hi[i] - state->scaling.lo[i]);
      act[i] = tp.add_const(tp.mul_const(act[i], s), -state->scaling.lo[i] * s - 1.0);
    }
  }

  int at = 0;
  const int layers = static_cast<int>(state->weights.size());
  for (int l = 0; l < layers; ++l) {
    const int fan_out = static_cast<int>(state->weights[l].rows());
    const int fan_in = static_cast<int>(state->weights[l].cols());
    std::vector<ad::VarRef> next(fan_out);
    const int bias_base = at + fan_out * fan_in;
    for (int i = 0; i < fan_out; ++i) {
      ad::VarRef s = params[bias_base + i];
      for (int j = 0; j < fan_in; ++j) s = tp.add(s, tp.mul(params[at + i * fan_in + j], act[j]));
      next[i] = (l + 1 < layers) ? tp.tanh(s) : s;
    }
    at = bias_base + fan_out;
    act = std::move(next);
  }
  return act;
}

void save_checkpoint(const NetworkState& state, const std::string& path) {
  json hdr;
  hdr["spec"] = {{"input_width", state.spec.input_width},
                 {"hidden_layers", state.spec.hidden_layers},
                 {"hidden_width", state.spec.hidden_width},
                 {"output_width", state.spec.output_width}};
  hdr["scaling"] = {{"enabled", state.scaling.enabled}, {"lo", state.scaling.lo}, {"hi", state.scaling.hi}};
  hdr["seed"] = state.init_seed;
  hdr["step"] = state.step;

  auto csv_line = [](const Eigen::VectorXd& v) {
    std::ostringstream ss;
    for (int i = 0; i < v.size(); ++i) {
      if (i) ss << ",";
      ss << fmt_exact(v[i]);
    }
    return ss.str();
  };

  // moments use the same canonical order as the parameters
  NetworkState moments = state;
  for (int l = 0; l < moments.layer_count(); ++l) {
    moments.weights[l] = state.m_w[l];
    moments.biases[l] = state.m_b[l];
  }
  const Eigen::VectorXd m_flat = moments.flatten_params();
  for (int l = 0; l < moments.layer_count(); ++l) {
    moments.weights[l] = state.v_w[l];
    moments.biases[l] = state.v_b[l];
  }
  const Eigen::VectorXd v_flat = moments.flatten_params();

  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out << hdr.dump() << "\n"
      << csv_line(state.flatten_params()) << "\n"
      << csv_line(m_flat) << "\n"
      << csv_line(v_flat) << "\n";
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

NetworkState load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  std::string hdr_line;
  if (!std::getline(in, hdr_line)) throw std::runtime_error("load_checkpoint: missing header");
  json hdr = json::parse(hdr_line);

  NetworkSpec spec;
  spec.input_width = hdr.at("spec").at("input_width").get<int>();
  spec.hidden_layers = hdr.at("spec").at("hidden_layers").get<int>();
  spec.hidden_width = hdr.at("spec").at("hidden_width").get<int>();
  spec.output_width = hdr.at("spec").at("output_width").get<int>();

  NetworkState st = init_network(spec, hdr.at("seed").get<std::uint64_t>());
  st.step = hdr.at("step").get<std::int64_t>();
  st.scaling.enabled = hdr.at("scaling").at("enabled").get<bool>();
  st.scaling.lo = hdr.at("scaling").at("lo").get<std::vector<double>>();
  st.scaling.hi = hdr.at("scaling").at("hi").get<std::vector<double>>();

  auto parse_line = [&](const char* what) {
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(std::string("load_checkpoint: missing ") + what);
    std::istringstream ls(line);
    std::string cell;
    Eigen::VectorXd v(spec.parameter_count());
    for (int i = 0; i < v.size(); ++i) {
      if (!std::getline(ls, cell, ','))
        throw std::runtime_error(std::string("load_checkpoint: short ") + what + " line");
      v[i] = std::stod(cell);
    }
    return v;
  };

  st.unflatten_params(parse_line("parameter"));
  NetworkState tmp = st;
  tmp.unflatten_params(parse_line("first-moment"));
  for (int l = 0; l < st.layer_count(); ++l) {
    st.m_w[l] = tmp.weights[l];
    st.m_b[l] = tmp.biases[l];
  }
  tmp.unflatten_params(parse_line("second-moment"));
  for (int l = 0; l < st.layer_count(); ++l) {
    st.v_w[l] = tmp.weights[l];
    st.v_b[l] = tmp.biases[l];
  }
  return st;
}

}  // namespace ecgi::nn
