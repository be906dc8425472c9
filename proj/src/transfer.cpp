#include "ecgi/transfer.hpp"

#include <zlib.h>

#include <Eigen/SVD>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "ecgi/common.hpp"

namespace ecgi::transfer {

double condition_number(const Eigen::MatrixXd& R) {
  if (R.size() == 0 || R.cwiseAbs().maxCoeff() == 0.0)
    throw std::invalid_argument("condition_number: zero matrix");
  Eigen::BDCSVD<Eigen::MatrixXd> svd(R);
  const Eigen::VectorXd& s = svd.singularValues();
  const double smax = s[0];
  double smin = smax;
  for (int i = 0; i < s.size(); ++i)
    if (s[i] > 1e-12 * smax) smin = s[i];
  return smax / smin;
}

Eigen::MatrixXd kernel_matrix(const Eigen::MatrixXd& sensor_coords, const Eigen::MatrixXd& node_coords) {
  if (sensor_coords.cols() != node_coords.cols())
    throw std::invalid_argument("kernel_matrix: dimension mismatch");
  const int m = static_cast<int>(sensor_coords.rows());
  const int n = static_cast<int>(node_coords.rows());
  Eigen::MatrixXd R(m, n);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      const double d = (sensor_coords.row(i) - node_coords.row(j)).norm();
      if (d <= 0.0) throw std::invalid_argument("kernel_matrix: sensor coincides with a node");
      R(i, j) = 1.0 / (4.0 * std::numbers::pi * d);
    }
    R.row(i) /= R.row(i).sum();
  }
  return R;
}

TransferModel synth_transfer(const geometry::SpatialDomain& domain, int sensor_count, double standoff,
                             std::uint64_t seed) {
  const int n = domain.node_count();
  if (sensor_count < 1) throw std::invalid_argument("synth_transfer: need at least one sensor");
  if (sensor_count >= n) throw std::invalid_argument("synth_transfer: sensor count must be < node count");
  if (standoff <= 0.0) throw std::invalid_argument("synth_transfer: standoff must be positive");

  auto [lo, hi] = domain.bounding_box();
  const Eigen::VectorXd center = 0.5 * (lo + hi);
  const double radius = 0.5 * (hi - lo).norm() + standoff;

  // Ring of sensors around the bounding box; a seeded phase offset makes
  // distinct seeds give distinct (but equally spaced) layouts.
  auto rng = make_rng(seed, hash_name("synth_transfer"));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double phase = 2.0 * std::numbers::pi * unit(rng);

  const int dim = domain.dim();
  Eigen::MatrixXd sensors(sensor_count, dim);
  for (int i = 0; i < sensor_count; ++i) {
    const double a = phase + 2.0 * std::numbers::pi * i / sensor_count;
    sensors(i, 0) = center[0] + radius * std::cos(a);
    sensors(i, 1) = center[1] + radius * std::sin(a);
    if (dim == 3) sensors(i, 2) = center[2];
  }

  TransferModel model;
  model.R = kernel_matrix(sensors, domain.node_coords);
  model.sensor_coords = sensors;
  model.condition_number = condition_number(model.R);
  model.provenance = TransferModel::Provenance::Synthetic;
  return model;
}

namespace {

bool has_gz_suffix(const std::string& path) {
  return path.size() > 3 && path.compare(path.size() - 3, 3, ".gz") == 0;
}

std::string read_all(const std::string& path) {
  if (has_gz_suffix(path)) {
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) throw std::runtime_error("load_transfer: cannot open " + path);
    std::string data;
    char buf[1 << 16];
    int got;
    while ((got = gzread(f, buf, sizeof(buf))) > 0) data.append(buf, static_cast<std::size_t>(got));
    const bool bad = got < 0;
    gzclose(f);
    if (bad) throw std::runtime_error("load_transfer: gzip read error in " + path);
    return data;
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_transfer: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_all(const std::string& path, const std::string& data) {
  if (has_gz_suffix(path)) {
    gzFile f = gzopen(path.c_str(), "wb");
    if (!f) throw std::runtime_error("save_transfer: cannot open " + path);
    const bool ok = gzwrite(f, data.data(), static_cast<unsigned>(data.size())) ==
                    static_cast<int>(data.size());
    gzclose(f);
    if (!ok) throw std::runtime_error("save_transfer: gzip write error in " + path);
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_transfer: cannot open " + path);
  out << data;
  if (!out) throw std::runtime_error("save_transfer: write failed for " + path);
}

}  // namespace

void save_transfer(const TransferModel& model, const std::string& path) {
  std::ostringstream ss;
  ss << model.sensors() << " " << model.nodes() << "\n";
  for (int i = 0; i < model.sensors(); ++i) {
    for (int j = 0; j < model.nodes(); ++j) {
      if (j) ss << ",";
      ss << fmt_exact(model.R(i, j));
    }
    ss << "\n";
  }
  write_all(path, ss.str());
}

TransferModel load_transfer(const std::string& path) {
  std::istringstream in(read_all(path));
  int m = 0, n = 0;
  in >> m >> n;
  if (!in || m < 1 || n < 1) throw std::runtime_error("load_transfer: bad header in " + path);
  in.ignore();  // trailing newline
  TransferModel model;
  model.R.resize(m, n);
  std::string line, cell;
  for (int i = 0; i < m; ++i) {
    if (!std::getline(in, line)) throw std::runtime_error("load_transfer: truncated matrix in " + path);
    std::istringstream ls(line);
    for (int j = 0; j < n; ++j) {
      if (!std::getline(ls, cell, ','))
        throw std::runtime_error("load_transfer: short row " + std::to_string(i) + " in " + path);
      model.R(i, j) = std::stod(cell);
    }
  }
  model.condition_number = condition_number(model.R);
  model.provenance = TransferModel::Provenance::Loaded;
  return model;
}

}  // namespace ecgi::transfer
