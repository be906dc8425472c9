#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "ecgi/neuralnet.hpp"

using namespace ecgi;
using namespace ecgi::nn;

namespace {
std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

// One hidden tanh neuron computing tanh(2x - t), affine identity output.
NetworkState appendix_network() {
  NetworkSpec spec{2, 1, 1, 1};
  NetworkState st = init_network(spec, 0);
  st.weights[0] << 2.0, -1.0;
  st.biases[0] << 0.0;
  st.weights[1] << 1.0;
  st.biases[1] << 0.0;
  return st;
}
}  // namespace

TEST_CASE("init is deterministic and Glorot-bounded with zero biases") {
  NetworkSpec spec{3, 5, 10, 2};
  auto a = init_network(spec, 42);
  auto b = init_network(spec, 42);
  CHECK((a.flatten_params() - b.flatten_params()).cwiseAbs().maxCoeff() == 0.0);

  auto c = init_network(spec, 43);
  CHECK((a.flatten_params() - c.flatten_params()).cwiseAbs().maxCoeff() > 0.0);

  for (int l = 0; l < a.layer_count(); ++l) {
    CHECK(a.biases[l].cwiseAbs().maxCoeff() == 0.0);
    const double limit =
        std::sqrt(6.0 / (a.weights[l].cols() + a.weights[l].rows()));
    CHECK(a.weights[l].cwiseAbs().maxCoeff() <= limit);
    CHECK(a.m_w[l].cwiseAbs().maxCoeff() == 0.0);
    CHECK(a.v_w[l].cwiseAbs().maxCoeff() == 0.0);
  }
  CHECK(a.step == 0);
}

TEST_CASE("parameter count matches the hand count for NN3") {
  NetworkSpec spec{3, 5, 10, 2};
  CHECK(spec.parameter_count() == 502);
  CHECK(init_network(spec, 1).flatten_params().size() == 502);
}

TEST_CASE("zero network maps everything to zero") {
  NetworkSpec spec{3, 2, 4, 2};
  auto st = init_network(spec, 1);
  st.unflatten_params(Eigen::VectorXd::Zero(spec.parameter_count()));
  Eigen::MatrixXd coords(3, 3);
  coords << 0.1, -0.5, 2.0, 1.0, 1.0, 1.0, -3.0, 0.0, 5.0;
  CHECK(forward(st, coords).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("hand-set single-neuron network reproduces tanh(2x - t)") {
  auto st = appendix_network();
  Eigen::MatrixXd coords(1, 2);
  coords << 2.0, 3.0;
  const double u = forward(st, coords)(0, 0);
  CHECK(u == doctest::Approx(0.7616).epsilon(1e-4));
  CHECK(u == doctest::Approx(std::tanh(1.0)).epsilon(1e-15));

  // taped forward agrees and differentiates to the chain-rule values
  ad::Tape tape;
  auto net = TapedNetwork::make(tape, st);
  ad::VarRef x = tape.input(2.0), t = tape.input(3.0);
  auto out = net.forward(std::vector<ad::VarRef>{x, t});
  CHECK(tape.value(out[0]) == u);
  auto g = tape.gradient(out[0], std::vector<ad::VarRef>{x, t});
  const double sech2 = 1.0 - std::tanh(1.0) * std::tanh(1.0);
  CHECK(g[0] == doctest::Approx(2.0 * sech2).epsilon(1e-14));
  CHECK(g[1] == doctest::Approx(-sech2).epsilon(1e-14));
}

TEST_CASE("forward is permutation-equivariant over the batch") {
  NetworkSpec spec{3, 3, 8, 2};
  auto st = init_network(spec, 5);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-1, 1);
  Eigen::MatrixXd coords(7, 3);
  for (int i = 0; i < coords.size(); ++i) coords.data()[i] = u(rng);
  Eigen::MatrixXd out = forward(st, coords);
  CHECK(out.rows() == 7);

  std::vector<int> perm = {3, 0, 6, 1, 5, 2, 4};
  Eigen::MatrixXd shuffled(7, 3);
  for (int i = 0; i < 7; ++i) shuffled.row(i) = coords.row(perm[i]);
  Eigen::MatrixXd out2 = forward(st, shuffled);
  for (int i = 0; i < 7; ++i) CHECK((out2.row(i) - out.row(perm[i])).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("taped forward equals the plain forward") {
  NetworkSpec spec{3, 5, 10, 2};
  auto st = init_network(spec, 11);
  st.scaling = InputScaling::from_bounds({0, 0, 0}, {15, 15, 7});
  Eigen::MatrixXd coords(4, 3);
  coords << 0, 0, 0, 15, 15, 7, 3.5, 8.1, 2.2, 7, 14, 6.9;
  Eigen::MatrixXd plain = forward(st, coords);

  ad::Tape tape;
  auto net = TapedNetwork::make(tape, st);
  for (int r = 0; r < coords.rows(); ++r) {
    std::vector<ad::VarRef> in;
    for (int c = 0; c < 3; ++c) in.push_back(tape.input(coords(r, c)));
    auto out = net.forward(in);
    for (int c = 0; c < 2; ++c)
      CHECK(tape.value(out[c]) == doctest::Approx(plain(r, c)).epsilon(1e-15));
  }
}

TEST_CASE("adam: zero gradients leave parameters unchanged and bump the step") {
  NetworkSpec spec{2, 1, 3, 1};
  auto st = init_network(spec, 3);
  auto next = adam_step(st, Eigen::VectorXd::Zero(spec.parameter_count()), AdamConfig{});
  CHECK(next.step == 1);
  CHECK((next.flatten_params() - st.flatten_params()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("adam single step matches the hand-evaluated update") {
  NetworkSpec spec{1, 1, 1, 1};
  auto st = init_network(spec, 0);
  st.unflatten_params(Eigen::VectorXd::Zero(4));
  Eigen::VectorXd g(4);
  g << 1.0, 0.0, 0.0, 0.0;
  AdamConfig cfg;
  cfg.learning_rate = 0.1;
  auto next = adam_step(st, g, cfg);
  // bias-corrected m=1, v=1 -> update alpha/(1+eps)
  CHECK(std::abs(next.flatten_params()[0] + 0.1) < 1e-8);
  CHECK(next.flatten_params().tail(3).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("adam is not linear in the learning rate") {
  // optimizer steps on the quadratic loss |theta|^2, gradient 2*theta
  NetworkSpec spec{1, 1, 2, 1};
  auto st = init_network(spec, 8);
  AdamConfig cfg;
  auto grad_of = [](const NetworkState& s) { return Eigen::VectorXd(2.0 * s.flatten_params()); };
  auto one = adam_step(st, grad_of(st), cfg);
  auto twice = adam_step(one, grad_of(one), cfg);
  AdamConfig doubled = cfg;
  doubled.learning_rate *= 2.0;
  auto once = adam_step(st, grad_of(st), doubled);
  CHECK((twice.flatten_params() - once.flatten_params()).cwiseAbs().maxCoeff() > 1e-9);
}

TEST_CASE("adam rejects non-finite gradients with a block diagnostic") {
  NetworkSpec spec{2, 1, 2, 1};
  auto st = init_network(spec, 3);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(spec.parameter_count());
  g[1] = std::numeric_limits<double>::quiet_NaN();
  try {
    adam_step(st, g, AdamConfig{});
    FAIL("expected error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("layer 0") != std::string::npos);
  }
}

TEST_CASE("sharded accumulation") {
  Eigen::VectorXd g(3);
  g << 1.0, -2.0, 0.5;

  SUBCASE("one shard is divided by its size") {
    auto r = accumulate_sharded({{g, 4}});
    CHECK((r - g / 4.0).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("opposite shards cancel") {
    auto r = accumulate_sharded({{g, 2}, {Eigen::VectorXd(-g), 2}});
    CHECK(r.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("empty list and zero totals are rejected") {
    CHECK_THROWS_AS(accumulate_sharded({}), std::invalid_argument);
    CHECK_THROWS_AS(accumulate_sharded({{g, 0}}), std::invalid_argument);
  }
}

TEST_CASE("sharded accumulation equals the unsharded batch gradient") {
  // batch of 64 per-sample gradients in a fixed summation order
  std::mt19937_64 rng(17);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<Eigen::VectorXd> samples;
  for (int i = 0; i < 64; ++i) {
    Eigen::VectorXd s(5);
    for (int j = 0; j < 5; ++j) s[j] = gauss(rng);
    samples.push_back(s);
  }
  Eigen::VectorXd whole = Eigen::VectorXd::Zero(5);
  for (const auto& s : samples) whole += s;
  const Eigen::VectorXd unsharded = whole / 64.0;

  std::vector<std::pair<Eigen::VectorXd, std::size_t>> shards;
  for (int s = 0; s < 4; ++s) {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(5);
    for (int i = 0; i < 16; ++i) acc += samples[s * 16 + i];
    shards.emplace_back(acc, 16);
  }
  CHECK((accumulate_sharded(shards) - unsharded).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("parameter gradients from the tape match finite differences") {
  NetworkSpec spec{3, 3, 6, 2};
  auto st = init_network(spec, 21);
  Eigen::MatrixXd coords(5, 3);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int i = 0; i < coords.size(); ++i) coords.data()[i] = u(rng);

  auto loss_at = [&](const NetworkState& s) {
    Eigen::MatrixXd out = forward(s, coords);
    return out.array().square().sum();
  };

  ad::Tape tape;
  auto net = TapedNetwork::make(tape, st);
  ad::VarRef loss = tape.constant(0.0);
  for (int r = 0; r < coords.rows(); ++r) {
    std::vector<ad::VarRef> in;
    for (int c = 0; c < 3; ++c) in.push_back(tape.input(coords(r, c)));
    auto out = net.forward(in);
    for (auto o : out) loss = tape.add(loss, tape.square(o));
  }
  auto grads = tape.gradient(loss, net.params);

  std::mt19937_64 pick_rng(99);
  std::uniform_int_distribution<int> pick(0, spec.parameter_count() - 1);
  for (int rep = 0; rep < 20; ++rep) {
    const int p = pick(pick_rng);
    const double h = 1e-6;
    NetworkState lo = st, hi = st;
    Eigen::VectorXd flat = st.flatten_params();
    Eigen::VectorXd fl = flat, fh = flat;
    fl[p] -= h;
    fh[p] += h;
    lo.unflatten_params(fl);
    hi.unflatten_params(fh);
    const double fd = (loss_at(hi) - loss_at(lo)) / (2 * h);
    CHECK(std::abs(grads[p] - fd) <= 1e-4 * std::max(1.0, std::abs(fd)));
  }
}

TEST_CASE("checkpoint round trip is bit exact including moments") {
  NetworkSpec spec{3, 2, 5, 2};
  auto st = init_network(spec, 77);
  st.scaling = InputScaling::from_bounds({0, 0, 0}, {1, 2, 3});
  Eigen::VectorXd g(spec.parameter_count());
  std::mt19937_64 rng(5);
  std::normal_distribution<double> gauss(0.0, 0.3);
  for (int i = 0; i < g.size(); ++i) g[i] = gauss(rng);
  st = adam_step(st, g, AdamConfig{});

  const std::string path = temp_path("ecgi_ckpt.txt");
  save_checkpoint(st, path);
  auto back = load_checkpoint(path);
  CHECK(back.step == st.step);
  CHECK(back.init_seed == st.init_seed);
  CHECK(back.scaling.enabled == st.scaling.enabled);
  CHECK((back.flatten_params() - st.flatten_params()).cwiseAbs().maxCoeff() == 0.0);
  for (int l = 0; l < st.layer_count(); ++l) {
    CHECK((back.m_w[l] - st.m_w[l]).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.v_w[l] - st.v_w[l]).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.m_b[l] - st.m_b[l]).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.v_b[l] - st.v_b[l]).cwiseAbs().maxCoeff() == 0.0);
  }
}
