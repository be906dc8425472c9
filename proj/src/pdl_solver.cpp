#include "ecgi/pdl_solver.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "ecgi/common.hpp"

namespace ecgi::pdl {

using nlohmann::json;

LossBreakdown total_loss(double l_hb, double l_bc, double l_f, double w) {
  if (w < 0.0) throw std::invalid_argument("total_loss: negative physics weight");
  if (l_hb < 0.0 || l_bc < 0.0 || l_f < 0.0)
    throw std::invalid_argument("total_loss: loss components must be nonnegative");
  LossBreakdown b;
  b.l_hb = l_hb;
  b.l_bc = l_bc;
  b.l_f = l_f;
  b.l_ph = l_bc + l_f;
  b.l_total = l_hb + w * b.l_ph;
  b.w = w;
  return b;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be positive");
  if (batch_time_slices < 1 || batch_interior < 0 || batch_boundary < 0)
    throw std::invalid_argument("TrainConfig: bad batch sizes");
  if (n_interior < 0 || n_boundary < 0) throw std::invalid_argument("TrainConfig: bad pool sizes");
  if (w < 0.0) throw std::invalid_argument("TrainConfig: negative physics weight");
  if (shard_points < 1 || shard_slices < 1) throw std::invalid_argument("TrainConfig: bad shard sizes");
  adam.validate();
}

CollocationSet sample_collocation(const geometry::SpatialDomain& domain, double t_max, int n_f,
                                  int n_bc, std::uint64_t seed, DerivativeMode mode) {
  if (n_f < 0 || n_bc < 0) throw std::invalid_argument("sample_collocation: negative counts");
  if (t_max < 0.0) throw std::invalid_argument("sample_collocation: negative horizon");

  CollocationSet set;
  set.seed = seed;
  auto rng = make_rng(seed, hash_name("collocation"));
  std::uniform_real_distribution<double> t_dist(0.0, t_max);
  const int dim = domain.dim();

  if (mode == DerivativeMode::Continuous) {
    if (domain.kind != geometry::DomainKind::Grid2D)
      throw std::invalid_argument("sample_collocation: continuous mode needs a grid domain");
    auto [lo, hi] = domain.bounding_box();
    std::uniform_real_distribution<double> x_dist(lo[0], hi[0]);
    std::uniform_real_distribution<double> y_dist(lo[1], hi[1]);
    for (int i = 0; i < n_f; ++i) {
      CollocationPoint p;
      p.coords[0] = x_dist(rng);
      p.coords[1] = y_dist(rng);
      p.t = t_dist(rng);
      set.interior.push_back(p);
    }
  } else {
    std::uniform_int_distribution<int> node_dist(0, domain.node_count() - 1);
    for (int i = 0; i < n_f; ++i) {
      CollocationPoint p;
      p.node = node_dist(rng);
      for (int d = 0; d < dim; ++d) p.coords[d] = domain.node_coords(p.node, d);
      p.t = t_dist(rng);
      set.interior.push_back(p);
    }
  }

  if (n_bc > 0 && domain.closed_surface()) {
    set.boundary_warning = true;  // closed surfaces have no boundary residual
    return set;
  }
  if (n_bc > 0) {
    std::uniform_int_distribution<int> b_dist(0, static_cast<int>(domain.boundary_nodes.size()) - 1);
    for (int i = 0; i < n_bc; ++i) {
      CollocationPoint p;
      const int k = b_dist(rng);
      p.node = domain.boundary_nodes[k];
      for (int d = 0; d < dim; ++d) p.coords[d] = domain.node_coords(p.node, d);
      p.t = t_dist(rng);
      set.boundary.push_back(p);
    }
  }
  return set;
}

ApResidualRefs ap_residuals_on_tape(ad::Tape& tape, ad::VarRef u, ad::VarRef v, ad::VarRef u_t,
                                    ad::VarRef v_t, ad::VarRef lap_u,
                                    const forward_sim::APParameters& params) {
  // r_u = u_t - D lap(u) - k_r u (u - a)(1 - u) + u v
  ad::VarRef reaction = tape.mul(tape.mul_const(u, params.k_r),
                                 tape.mul(tape.add_const(u, -params.a),
                                          tape.sub(tape.constant(1.0), u)));
  ad::VarRef r_u = tape.add(tape.sub(tape.sub(u_t, tape.mul_const(lap_u, params.D)), reaction),
                            tape.mul(u, v));

  // xi = e0 + mu1 v / (u + mu2); r_v = v_t - xi (-v - k_r u (u - a - 1))
  ad::VarRef denom = tape.add_const(u, params.mu2);
  ad::VarRef xi;
  try {
    xi = tape.add_const(tape.div(tape.mul_const(v, params.mu1), denom), params.e0);
  } catch (const std::domain_error&) {
    throw std::domain_error("physics residual: u = -mu2 at a collocation point makes xi singular");
  }
  ad::VarRef recovery = tape.sub(tape.constant(0.0),
                                 tape.add(v, tape.mul(tape.mul_const(u, params.k_r),
                                                      tape.add_const(u, -params.a - 1.0))));
  ad::VarRef r_v = tape.sub(v_t, tape.mul(xi, recovery));
  return {r_u, r_v};
}

namespace {

std::vector<ad::VarRef> eval_at_node(ad::Tape& tape, const nn::TapedNetwork& net,
                                     const geometry::SpatialDomain& domain, int node, ad::VarRef t) {
  std::vector<ad::VarRef> in;
  for (int d = 0; d < domain.dim(); ++d) in.push_back(tape.constant(domain.node_coords(node, d)));
  in.push_back(t);
  return net.forward(in);
}

}  // namespace

ad::VarRef data_loss_sum_on_tape(ad::Tape& tape, const nn::TapedNetwork& net,
                                 const transfer::TransferModel& transfer, const Eigen::MatrixXd& y,
                                 const geometry::SpatialDomain& domain,
                                 std::span<const int> slice_indices, double dt) {
  const int n = domain.node_count();
  const int m = transfer.sensors();
  if (transfer.nodes() != n) throw std::invalid_argument("data_loss: transfer column mismatch");
  if (y.rows() != m) throw std::invalid_argument("data_loss: sensor count mismatch");

  ad::VarRef sum = tape.constant(0.0);
  for (int slice : slice_indices) {
    if (slice < 0 || slice >= y.cols()) throw std::invalid_argument("data_loss: slice out of range");
    ad::VarRef t = tape.constant(slice * dt);
    std::vector<ad::VarRef> u_hat(n);
    for (int j = 0; j < n; ++j) u_hat[j] = eval_at_node(tape, net, domain, j, t)[0];
    for (int i = 0; i < m; ++i) {
      ad::VarRef pred = tape.constant(0.0);
      for (int j = 0; j < n; ++j)
        pred = tape.add(pred, tape.mul_const(u_hat[j], transfer.R(i, j)));
      sum = tape.add(sum, tape.square(tape.sub(tape.constant(y(i, slice)), pred)));
    }
  }
  return sum;
}

ad::VarRef interior_loss_sum_on_tape(ad::Tape& tape, const nn::TapedNetwork& net,
                                     const CollocationSet& colloc, std::span<const int> point_indices,
                                     const forward_sim::APParameters& params, DerivativeMode mode,
                                     const geometry::SpatialDomain& domain,
                                     const geometry::SparseOperator& lap) {
  ad::VarRef sum = tape.constant(0.0);
  for (int idx : point_indices) {
    const CollocationPoint& pt = colloc.interior.at(idx);
    const std::int32_t begin = tape.size();
    ad::VarRef t = tape.input(pt.t);

    if (mode == DerivativeMode::Continuous) {
      ad::VarRef x = tape.input(pt.coords[0]);
      ad::VarRef yy = tape.input(pt.coords[1]);
      auto out = net.forward(std::vector<ad::VarRef>{x, yy, t});
      const std::vector<ad::VarRef> xyt = {x, yy, t};
      auto d1 = tape.gradients_as_graph(out[0], xyt, begin);
      ad::VarRef v_t = tape.gradient_as_graph(out[1], t, begin);
      ad::VarRef u_xx = tape.gradient_as_graph(d1[0], x, begin);
      ad::VarRef u_yy = tape.gradient_as_graph(d1[1], yy, begin);
      ad::VarRef lap_u = tape.add(u_xx, u_yy);
      auto res = ap_residuals_on_tape(tape, out[0], out[1], d1[2], v_t, lap_u, params);
      sum = tape.add(sum, tape.add(tape.square(res.r_u), tape.square(res.r_v)));
    } else {
      auto out = eval_at_node(tape, net, domain, pt.node, t);
      auto d1 = tape.gradients_as_graph(out[0], std::vector<ad::VarRef>{t}, begin);
      ad::VarRef v_t = tape.gradient_as_graph(out[1], t, begin);
      // graph Laplacian row applied to node evaluations at the same time
      auto [lo, hi] = lap.row_span(pt.node);
      ad::VarRef lap_u = tape.constant(0.0);
      for (auto* e = lo; e != hi; ++e) {
        ad::VarRef u_j = (e->col == pt.node) ? out[0] : eval_at_node(tape, net, domain, e->col, t)[0];
        lap_u = tape.add(lap_u, tape.mul_const(u_j, e->value));
      }
      auto res = ap_residuals_on_tape(tape, out[0], out[1], d1[0], v_t, lap_u, params);
      sum = tape.add(sum, tape.add(tape.square(res.r_u), tape.square(res.r_v)));
    }
  }
  return sum;
}

ad::VarRef boundary_loss_sum_on_tape(ad::Tape& tape, const nn::TapedNetwork& net,
                                     const CollocationSet& colloc, std::span<const int> point_indices,
                                     DerivativeMode mode, const geometry::SpatialDomain& domain,
                                     const geometry::SparseOperator& boundary_grad) {
  // boundary node id -> row of the boundary operator / normals table
  std::vector<int> row_of(domain.node_count(), -1);
  for (std::size_t k = 0; k < domain.boundary_nodes.size(); ++k)
    row_of[domain.boundary_nodes[k]] = static_cast<int>(k);

  ad::VarRef sum = tape.constant(0.0);
  for (int idx : point_indices) {
    const CollocationPoint& pt = colloc.boundary.at(idx);
    const int row = row_of.at(pt.node);
    if (row < 0) throw std::invalid_argument("boundary_loss: point is not a boundary node");
    const std::int32_t begin = tape.size();
    ad::VarRef t = tape.input(pt.t);
    ad::VarRef r_bc;

    if (mode == DerivativeMode::Continuous) {
      ad::VarRef x = tape.input(pt.coords[0]);
      ad::VarRef yy = tape.input(pt.coords[1]);
      auto out = net.forward(std::vector<ad::VarRef>{x, yy, t});
      auto d = tape.gradients_as_graph(out[0], std::vector<ad::VarRef>{x, yy}, begin);
      r_bc = tape.add(tape.mul_const(d[0], domain.boundary_normals(row, 0)),
                      tape.mul_const(d[1], domain.boundary_normals(row, 1)));
    } else {
      auto [lo, hi] = boundary_grad.row_span(row);
      r_bc = tape.constant(0.0);
      for (auto* e = lo; e != hi; ++e) {
        ad::VarRef u_j = eval_at_node(tape, net, domain, e->col, t)[0];
        r_bc = tape.add(r_bc, tape.mul_const(u_j, e->value));
      }
    }
    sum = tape.add(sum, tape.square(r_bc));
  }
  return sum;
}

double data_loss(const nn::NetworkState& state, const transfer::TransferModel& transfer,
                 const Eigen::MatrixXd& y, const geometry::SpatialDomain& domain,
                 std::span<const int> slice_indices, double dt) {
  if (slice_indices.empty()) return 0.0;
  double sum = 0.0;
  const std::size_t chunk = 8;
  for (std::size_t at = 0; at < slice_indices.size(); at += chunk) {
    ad::Tape tape;
    auto net = nn::TapedNetwork::make(tape, state);
    auto part = slice_indices.subspan(at, std::min(chunk, slice_indices.size() - at));
    sum += tape.value(data_loss_sum_on_tape(tape, net, transfer, y, domain, part, dt));
  }
  return sum / (static_cast<double>(slice_indices.size()) * transfer.sensors());
}

std::pair<double, double> physics_loss(const nn::NetworkState& state, const CollocationSet& colloc,
                                       const forward_sim::APParameters& params, DerivativeMode mode,
                                       const geometry::SpatialDomain& domain) {
  const auto lap = laplacian_operator(domain);
  const auto bgrad = boundary_gradient_operator(domain);

  double l_f = 0.0, l_bc = 0.0;
  const std::size_t chunk = 256;
  if (!colloc.interior.empty()) {
    std::vector<int> idx(colloc.interior.size());
    std::iota(idx.begin(), idx.end(), 0);
    double sum = 0.0;
    for (std::size_t at = 0; at < idx.size(); at += chunk) {
      ad::Tape tape;
      auto net = nn::TapedNetwork::make(tape, state);
      std::span<const int> part(idx.data() + at, std::min(chunk, idx.size() - at));
      sum += tape.value(interior_loss_sum_on_tape(tape, net, colloc, part, params, mode, domain, lap));
    }
    l_f = sum / static_cast<double>(colloc.interior.size());
  }
  if (!colloc.boundary.empty()) {
    std::vector<int> idx(colloc.boundary.size());
    std::iota(idx.begin(), idx.end(), 0);
    double sum = 0.0;
    for (std::size_t at = 0; at < idx.size(); at += chunk) {
      ad::Tape tape;
      auto net = nn::TapedNetwork::make(tape, state);
      std::span<const int> part(idx.data() + at, std::min(chunk, idx.size() - at));
      sum += tape.value(boundary_loss_sum_on_tape(tape, net, colloc, part, mode, domain, bgrad));
    }
    l_bc = sum / static_cast<double>(colloc.boundary.size());
  }
  return {l_f, l_bc};
}

namespace {

int resolve_workers(int configured) {
  if (configured > 0) return configured;
  if (const char* env = std::getenv("ECGI_WORKERS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(std::min(hw, 8u));
}

std::vector<int> sample_indices(int pool, int want, std::mt19937_64& rng) {
  std::vector<int> all(pool);
  std::iota(all.begin(), all.end(), 0);
  if (want >= pool) return all;
  std::vector<int> out;
  out.reserve(want);
  std::sample(all.begin(), all.end(), std::back_inserter(out), want, rng);
  return out;
}

enum class Term { Data, Interior, Boundary };

struct ShardTask {
  Term term;
  std::vector<int> indices;
};

struct ShardResult {
  Eigen::VectorXd grad;
  double loss_sum = 0.0;
  std::size_t count = 0;
};

}  // namespace

LossAndGrad evaluate_loss_and_gradient(const nn::NetworkState& state, const TrainConfig& cfg,
                                       const Problem& problem, const CollocationSet& colloc,
                                       int epoch) {
  const geometry::SpatialDomain& domain = *problem.domain;
  const auto lap = laplacian_operator(domain);
  const auto bgrad = boundary_gradient_operator(domain);
  const int n_params = state.spec.parameter_count();

  auto rng = make_rng(cfg.batch_seed, mix_seed(hash_name("epoch"), static_cast<std::uint64_t>(epoch)));
  const std::vector<int> slices = sample_indices(problem.steps(), cfg.batch_time_slices, rng);
  const std::vector<int> interior =
      sample_indices(static_cast<int>(colloc.interior.size()),
                     std::min<int>(cfg.batch_interior, static_cast<int>(colloc.interior.size())), rng);
  const std::vector<int> boundary =
      sample_indices(static_cast<int>(colloc.boundary.size()),
                     std::min<int>(cfg.batch_boundary, static_cast<int>(colloc.boundary.size())), rng);

  std::vector<ShardTask> tasks;
  for (std::size_t at = 0; at < slices.size(); at += cfg.shard_slices)
    tasks.push_back({Term::Data, {slices.begin() + at,
                                  slices.begin() + std::min(at + cfg.shard_slices, slices.size())}});
  for (std::size_t at = 0; at < interior.size(); at += cfg.shard_points)
    tasks.push_back({Term::Interior, {interior.begin() + at,
                                      interior.begin() + std::min(at + cfg.shard_points, interior.size())}});
  for (std::size_t at = 0; at < boundary.size(); at += cfg.shard_points)
    tasks.push_back({Term::Boundary, {boundary.begin() + at,
                                      boundary.begin() + std::min(at + cfg.shard_points, boundary.size())}});

  std::vector<ShardResult> results(tasks.size());
  std::vector<std::exception_ptr> errors(tasks.size());

  auto run_task = [&](std::size_t i) {
    const ShardTask& task = tasks[i];
    ad::Tape tape;
    auto net = nn::TapedNetwork::make(tape, state);
    ad::VarRef loss;
    std::size_t count = 0;
    switch (task.term) {
      case Term::Data:
        loss = data_loss_sum_on_tape(tape, net, *problem.transfer, problem.y, domain, task.indices,
                                     problem.dt);
        count = task.indices.size() * static_cast<std::size_t>(problem.transfer->sensors());
        break;
      case Term::Interior:
        loss = interior_loss_sum_on_tape(tape, net, colloc, task.indices, problem.params, cfg.mode,
                                         domain, lap);
        count = task.indices.size();
        break;
      case Term::Boundary:
        loss = boundary_loss_sum_on_tape(tape, net, colloc, task.indices, cfg.mode, domain, bgrad);
        count = task.indices.size();
        break;
    }
    auto g = tape.gradient(loss, net.params);
    ShardResult r;
    r.grad = Eigen::Map<const Eigen::VectorXd>(g.data(), n_params);
    r.loss_sum = tape.value(loss);
    r.count = count;
    results[i] = std::move(r);
  };

  const int workers = resolve_workers(cfg.workers);
  if (workers <= 1 || tasks.size() <= 1) {
    for (std::size_t i = 0; i < tasks.size(); ++i) run_task(i);
  } else {
    std::atomic<std::size_t> next{0};
    auto drain = [&]() {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= tasks.size()) break;
        try {
          run_task(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    };
    std::vector<std::thread> pool;
    for (int wkr = 1; wkr < workers; ++wkr) pool.emplace_back(drain);
    drain();
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  // deterministic reduction in shard order, separately per term
  auto reduce = [&](Term term) {
    std::vector<std::pair<Eigen::VectorXd, std::size_t>> shards;
    double loss_sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      if (tasks[i].term != term || results[i].count == 0) continue;
      shards.emplace_back(results[i].grad, results[i].count);
      loss_sum += results[i].loss_sum;
      count += results[i].count;
    }
    struct Reduced {
      Eigen::VectorXd grad;
      double loss = 0.0;
    } r;
    if (shards.empty()) {
      r.grad = Eigen::VectorXd::Zero(n_params);
      return r;
    }
    r.grad = nn::accumulate_sharded(shards);
    r.loss = loss_sum / static_cast<double>(count);
    return r;
  };

  const auto data = reduce(Term::Data);
  const auto inter = reduce(Term::Interior);
  const auto bound = reduce(Term::Boundary);

  LossAndGrad out;
  out.losses = total_loss(data.loss, bound.loss, inter.loss, cfg.w);
  out.grad_hb = data.grad;
  out.grad_ph = inter.grad + bound.grad;
  out.grad = out.grad_hb + cfg.w * out.grad_ph;
  return out;
}

TrainResult train(const TrainConfig& cfg, const Problem& problem, const nn::NetworkState* resume) {
  cfg.validate();
  problem.params.validate();
  if (!problem.domain || !problem.transfer) throw std::invalid_argument("train: missing domain or transfer");
  const geometry::SpatialDomain& domain = *problem.domain;
  if (problem.transfer->nodes() != domain.node_count())
    throw std::invalid_argument("train: transfer column mismatch");
  if (problem.y.rows() != problem.transfer->sensors())
    throw std::invalid_argument("train: measurement row mismatch");
  if (problem.dt <= 0.0) throw std::invalid_argument("train: dt must be positive");

  nn::NetworkSpec spec = cfg.network;
  spec.input_width = domain.dim() + 1;

  nn::NetworkState state;
  if (resume) {
    if (!(resume->spec == spec)) throw std::invalid_argument("train: resume state has a different spec");
    state = *resume;
  } else {
    state = nn::init_network(spec, cfg.init_seed);
    auto [lo, hi] = domain.bounding_box();
    std::vector<double> lo_v(lo.data(), lo.data() + lo.size());
    std::vector<double> hi_v(hi.data(), hi.data() + hi.size());
    lo_v.push_back(0.0);
    hi_v.push_back(problem.t_max());
    state.scaling = nn::InputScaling::from_bounds(lo_v, hi_v);
  }

  const CollocationSet colloc = sample_collocation(domain, problem.t_max(), cfg.n_interior,
                                                   cfg.n_boundary, cfg.colloc_seed, cfg.mode);

  std::ofstream log;
  if (!cfg.log_path.empty()) {
    log.open(cfg.log_path, std::ios::app);
    if (!log) throw std::runtime_error("train: cannot open log " + cfg.log_path);
  }

  TrainResult result;
  for (int epoch = static_cast<int>(state.step) + 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    auto eval = evaluate_loss_and_gradient(state, cfg, problem, colloc, epoch);
    if (!std::isfinite(eval.losses.l_total))
      throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                               " (l_hb=" + std::to_string(eval.losses.l_hb) +
                               ", l_f=" + std::to_string(eval.losses.l_f) +
                               ", l_bc=" + std::to_string(eval.losses.l_bc) + ")");
    state = nn::adam_step(state, eval.grad, cfg.adam);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.losses = eval.losses;
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(rec);

    if (log.is_open()) {
      json line = {{"epoch", epoch},       {"L_hb", eval.losses.l_hb}, {"L_bc", eval.losses.l_bc},
                   {"L_f", eval.losses.l_f}, {"L_ph", eval.losses.l_ph}, {"L_total", eval.losses.l_total},
                   {"w", eval.losses.w},   {"wall_ms", rec.wall_ms}};
      log << line.dump() << "\n";
    }
  }
  result.state = std::move(state);
  return result;
}

forward_sim::FieldSeries predict_hsp(const nn::NetworkState& state,
                                     const geometry::SpatialDomain& domain,
                                     const Eigen::VectorXd& times) {
  const int n = domain.node_count();
  const int t_count = static_cast<int>(times.size());
  if (t_count < 1) throw std::invalid_argument("predict_hsp: need at least one time");

  forward_sim::FieldSeries f;
  f.u.resize(n, t_count);
  f.v.resize(n, t_count);
  f.times = times;
  f.dt = t_count > 1 ? times[1] - times[0] : 0.0;

  Eigen::MatrixXd coords(n, domain.dim() + 1);
  for (int t = 0; t < t_count; ++t) {
    for (int i = 0; i < n; ++i) {
      for (int d = 0; d < domain.dim(); ++d) coords(i, d) = domain.node_coords(i, d);
      coords(i, domain.dim()) = times[t];
    }
    const Eigen::MatrixXd out = nn::forward(state, coords);
    f.u.col(t) = out.col(0);
    f.v.col(t) = out.col(1);
  }
  return f;
}

}  // namespace ecgi::pdl
