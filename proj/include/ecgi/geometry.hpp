#ifndef ECGI_GEOMETRY_HPP
#define ECGI_GEOMETRY_HPP

#include <Eigen/Core>
#include <string>
#include <vector>

namespace ecgi::geometry {

enum class DomainKind { Grid2D, TriMesh };

/// One (row, col, value) entry of a sparse operator.
struct SparseEntry {
  int row = 0;
  int col = 0;
  double value = 0.0;
};

/// Sparse linear operator stored as sorted (row, col, value) triples.
/// Entries are unique and sorted by (row, col) so that two constructions
/// from identical inputs compare equal entry-for-entry.
struct SparseOperator {
  int rows = 0;
  int cols = 0;
  std::vector<SparseEntry> entries;

  Eigen::VectorXd apply(const Eigen::VectorXd& x) const;
  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const;
  Eigen::MatrixXd dense() const;
  /// Entries of one row (entries are row-major sorted, so this is a
  /// contiguous slice).
  std::pair<const SparseEntry*, const SparseEntry*> row_span(int row) const;
};

/// Discretized heart domain: a regular 2D grid or a triangulated surface.
/// Immutable after construction.
struct SpatialDomain {
  DomainKind kind = DomainKind::Grid2D;
  Eigen::MatrixXd node_coords;     // N x dim (dim = 2 for grid, 3 for mesh)
  Eigen::MatrixXi elements;        // grid cells (F x 4) or triangles (F x 3)
  std::vector<int> boundary_nodes;
  Eigen::MatrixXd boundary_normals;  // |boundary| x dim, unit length
  double h = 0.0;                    // grid spacing (grid2d only)
  int nx = 0, ny = 0;                // grid extents (grid2d only)

  int node_count() const { return static_cast<int>(node_coords.rows()); }
  int dim() const { return static_cast<int>(node_coords.cols()); }
  bool closed_surface() const { return boundary_nodes.empty(); }
  /// Bounding box as (lo, hi) per coordinate axis.
  std::pair<Eigen::VectorXd, Eigen::VectorXd> bounding_box() const;
};

/// Regular nx-by-ny grid with spacing h. Boundary nodes are the perimeter;
/// edge normals are axis-aligned, corner normals average the two adjacent
/// edge normals and are renormalized.
SpatialDomain build_grid(int nx, int ny, double h);

/// Reads the plain-text mesh format: "nodes <N> faces <F>" header, then
/// N "v x y z" lines and F "f i j k" lines (0-based). Rejects out-of-range
/// indices and non-manifold edges (more than two incident triangles).
SpatialDomain load_mesh(const std::string& path);

/// Writes the same format; coordinates keep 17 significant digits.
void save_mesh(const SpatialDomain& domain, const std::string& path);

/// Discrete Laplacian approximating the continuous operator (diffusion
/// conductivity is applied by the caller). Grid: 5-point stencil with
/// Neumann mirror ghosts. Mesh: cotangent weights with Voronoi-area
/// scaling, symmetrized so row sums stay zero.
SparseOperator laplacian_operator(const SpatialDomain& domain);

/// Outward normal derivative n . grad(u), one row per boundary node,
/// one-sided first-order differences. Closed surfaces yield a 0-row
/// operator.
SparseOperator boundary_gradient_operator(const SpatialDomain& domain);

}  // namespace ecgi::geometry

#endif
