#ifndef ECGI_TRANSFER_HPP
#define ECGI_TRANSFER_HPP

#include <Eigen/Core>
#include <cstdint>
#include <string>

#include "ecgi/geometry.hpp"

namespace ecgi::transfer {

/// Heart-to-torso measurement matrix with cached conditioning metadata.
struct TransferModel {
  Eigen::MatrixXd R;              // M x N
  Eigen::MatrixXd sensor_coords;  // M x dim (empty when loaded from file)
  double condition_number = 1.0;
  enum class Provenance { Synthetic, Loaded } provenance = Provenance::Synthetic;

  int sensors() const { return static_cast<int>(R.rows()); }
  int nodes() const { return static_cast<int>(R.cols()); }
};

/// Ratio of largest to smallest nonzero singular value; singular values
/// below 1e-12 * sigma_max count as zero.
double condition_number(const Eigen::MatrixXd& R);

/// Row-normalized 1/(4*pi*d) kernel between sensor and node positions.
Eigen::MatrixXd kernel_matrix(const Eigen::MatrixXd& sensor_coords, const Eigen::MatrixXd& node_coords);

/// Synthetic transfer model: `sensor_count` sensors on a ring at distance
/// `standoff` outside the domain bounding box, inverse-distance kernel,
/// rows scaled to unit sum. Requires sensor_count < node count.
TransferModel synth_transfer(const geometry::SpatialDomain& domain, int sensor_count, double standoff,
                             std::uint64_t seed);

/// CSV format: header "M N", then M rows of N values at full precision.
/// Paths ending in .gz are written/read gzip-compressed.
void save_transfer(const TransferModel& model, const std::string& path);
TransferModel load_transfer(const std::string& path);

}  // namespace ecgi::transfer

#endif
