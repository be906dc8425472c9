#include "ecgi/geometry.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "ecgi/common.hpp"

namespace ecgi::geometry {

namespace {

void sort_and_check(SparseOperator& op) {
  std::sort(op.entries.begin(), op.entries.end(), [](const SparseEntry& a, const SparseEntry& b) {
    return a.row != b.row ? a.row < b.row : a.col < b.col;
  });
  for (std::size_t i = 0; i < op.entries.size(); ++i) {
    const auto& e = op.entries[i];
    if (e.row < 0 || e.row >= op.rows || e.col < 0 || e.col >= op.cols)
      throw std::runtime_error("sparse operator entry out of range");
    if (i > 0 && op.entries[i - 1].row == e.row && op.entries[i - 1].col == e.col)
      throw std::runtime_error("duplicate sparse operator entry");
  }
}

// Accumulates duplicate (row, col) contributions before the uniqueness check.
struct TripletBuilder {
  std::map<std::pair<int, int>, double> acc;
  void add(int r, int c, double v) { acc[{r, c}] += v; }
  SparseOperator finish(int rows, int cols) && {
    SparseOperator op;
    op.rows = rows;
    op.cols = cols;
    op.entries.reserve(acc.size());
    for (const auto& [rc, v] : acc) op.entries.push_back({rc.first, rc.second, v});
    sort_and_check(op);
    return op;
  }
};

}  // namespace

Eigen::VectorXd SparseOperator::apply(const Eigen::VectorXd& x) const {
  if (x.size() != cols) throw std::invalid_argument("sparse apply: size mismatch");
  Eigen::VectorXd y = Eigen::VectorXd::Zero(rows);
  for (const auto& e : entries) y[e.row] += e.value * x[e.col];
  return y;
}

Eigen::MatrixXd SparseOperator::apply(const Eigen::MatrixXd& x) const {
  if (x.rows() != cols) throw std::invalid_argument("sparse apply: size mismatch");
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(rows, x.cols());
  for (const auto& e : entries) y.row(e.row) += e.value * x.row(e.col);
  return y;
}

Eigen::MatrixXd SparseOperator::dense() const {
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(rows, cols);
  for (const auto& e : entries) d(e.row, e.col) = e.value;
  return d;
}

std::pair<const SparseEntry*, const SparseEntry*> SparseOperator::row_span(int row) const {
  auto lo = std::lower_bound(entries.begin(), entries.end(), row,
                             [](const SparseEntry& e, int r) { return e.row < r; });
  auto hi = std::upper_bound(entries.begin(), entries.end(), row,
                             [](int r, const SparseEntry& e) { return r < e.row; });
  return {entries.data() + (lo - entries.begin()), entries.data() + (hi - entries.begin())};
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> SpatialDomain::bounding_box() const {
  return {node_coords.colwise().minCoeff(), node_coords.colwise().maxCoeff()};
}

SpatialDomain build_grid(int nx, int ny, double h) {
  if (nx < 3 || ny < 3) throw std::invalid_argument("build_grid: nx and ny must be >= 3");
  if (h <= 0.0) throw std::invalid_argument("build_grid: h must be positive");

  SpatialDomain d;
  d.kind = DomainKind::Grid2D;
  d.nx = nx;
  d.ny = ny;
  d.h = h;
  const int n = nx * ny;
  d.node_coords.resize(n, 2);
  for (int iy = 0; iy < ny; ++iy)
    for (int ix = 0; ix < nx; ++ix) {
      const int id = iy * nx + ix;
      d.node_coords(id, 0) = ix * h;
      d.node_coords(id, 1) = iy * h;
    }

  d.elements.resize((nx - 1) * (ny - 1), 4);
  int cell = 0;
  for (int iy = 0; iy + 1 < ny; ++iy)
    for (int ix = 0; ix + 1 < nx; ++ix, ++cell) {
      const int base = iy * nx + ix;
      d.elements.row(cell) << base, base + 1, base + nx + 1, base + nx;
    }

  std::vector<Eigen::Vector2d> normals;
  for (int iy = 0; iy < ny; ++iy)
    for (int ix = 0; ix < nx; ++ix) {
      Eigen::Vector2d nrm(0, 0);
      if (ix == 0) nrm += Eigen::Vector2d(-1, 0);
      if (ix == nx - 1) nrm += Eigen::Vector2d(1, 0);
      if (iy == 0) nrm += Eigen::Vector2d(0, -1);
      if (iy == ny - 1) nrm += Eigen::Vector2d(0, 1);
      if (nrm.squaredNorm() > 0) {
        d.boundary_nodes.push_back(iy * nx + ix);
        normals.push_back(nrm.normalized());
      }
    }
  d.boundary_normals.resize(static_cast<int>(normals.size()), 2);
  for (std::size_t i = 0; i < normals.size(); ++i) d.boundary_normals.row(static_cast<int>(i)) = normals[i];
  return d;
}

namespace {

[[noreturn]] void parse_fail(const std::string& path, int line, const std::string& what) {
  throw std::runtime_error(path + ":" + std::to_string(line) + ": mesh parse error: " + what);
}

// Boundary normals of an open mesh: per boundary edge, the in-surface
// direction perpendicular to the edge and pointing away from the triangle;
// node normals average their incident edge normals.
void mesh_boundary(SpatialDomain& d) {
  const int n = d.node_count();
  std::map<std::pair<int, int>, std::vector<int>> edge_faces;
  for (int f = 0; f < d.elements.rows(); ++f) {
    for (int k = 0; k < 3; ++k) {
      int a = d.elements(f, k), b = d.elements(f, (k + 1) % 3);
      edge_faces[{std::min(a, b), std::max(a, b)}].push_back(f);
    }
  }
  for (const auto& [e, fs] : edge_faces)
    if (fs.size() > 2)
      throw std::runtime_error("load_mesh: non-manifold edge (" + std::to_string(e.first) + "," +
                               std::to_string(e.second) + ") with " + std::to_string(fs.size()) +
                               " incident triangles");

  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(n, 3);
  std::vector<bool> on_boundary(n, false);
  for (const auto& [e, fs] : edge_faces) {
    if (fs.size() != 1) continue;
    const int f = fs[0];
    int a = e.first, b = e.second, c = -1;
    for (int k = 0; k < 3; ++k) {
      int v = d.elements(f, k);
      if (v != a && v != b) c = v;
    }
    Eigen::Vector3d pa = d.node_coords.row(a), pb = d.node_coords.row(b), pc = d.node_coords.row(c);
    Eigen::Vector3d face_n = (pb - pa).cross(pc - pa);
    Eigen::Vector3d out = (pb - pa).cross(face_n);
    if (out.dot(pc - pa) > 0) out = -out;  // away from the third vertex
    if (out.norm() > 0) out.normalize();
    acc.row(a) += out;
    acc.row(b) += out;
    on_boundary[a] = on_boundary[b] = true;
  }
  for (int i = 0; i < n; ++i) {
    if (!on_boundary[i]) continue;
    d.boundary_nodes.push_back(i);
  }
  d.boundary_normals.resize(static_cast<int>(d.boundary_nodes.size()), 3);
  for (std::size_t k = 0; k < d.boundary_nodes.size(); ++k) {
    Eigen::Vector3d v = acc.row(d.boundary_nodes[k]);
    if (v.norm() < 1e-14) v = Eigen::Vector3d(1, 0, 0);  // degenerate ring; any unit vector
    d.boundary_normals.row(static_cast<int>(k)) = v.normalized();
  }
}

}  // namespace

SpatialDomain load_mesh(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_mesh: cannot open " + path);

  std::string line;
  int lineno = 0;
  auto next_line = [&]() -> bool {
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) return true;
    }
    return false;
  };

  if (!next_line()) parse_fail(path, lineno, "empty file");
  std::istringstream hdr(line);
  std::string knodes, kfaces;
  long n = -1, f = -1;
  hdr >> knodes >> n >> kfaces >> f;
  if (knodes != "nodes" || kfaces != "faces" || n < 0 || f < 0 || hdr.fail())
    parse_fail(path, lineno, "expected header 'nodes <N> faces <F>'");

  SpatialDomain d;
  d.kind = DomainKind::TriMesh;
  d.node_coords.resize(n, 3);
  for (long i = 0; i < n; ++i) {
    if (!next_line()) parse_fail(path, lineno, "unexpected end of file in vertex list");
    std::istringstream ls(line);
    std::string tag;
    double x, y, z;
    ls >> tag >> x >> y >> z;
    if (tag != "v" || ls.fail()) parse_fail(path, lineno, "expected 'v x y z'");
    d.node_coords.row(i) << x, y, z;
  }
  d.elements.resize(f, 3);
  for (long i = 0; i < f; ++i) {
    if (!next_line()) parse_fail(path, lineno, "unexpected end of file in face list");
    std::istringstream ls(line);
    std::string tag;
    long a, b, c;
    ls >> tag >> a >> b >> c;
    if (tag != "f" || ls.fail()) parse_fail(path, lineno, "expected 'f i j k'");
    for (long v : {a, b, c})
      if (v < 0 || v >= n) parse_fail(path, lineno, "face index " + std::to_string(v) + " out of range [0," + std::to_string(n) + ")");
    if (a == b || b == c || a == c) parse_fail(path, lineno, "degenerate face with repeated vertex");
    d.elements.row(i) << static_cast<int>(a), static_cast<int>(b), static_cast<int>(c);
  }
  mesh_boundary(d);
  return d;
}

void save_mesh(const SpatialDomain& domain, const std::string& path) {
  if (domain.kind != DomainKind::TriMesh) throw std::invalid_argument("save_mesh: trimesh domains only");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_mesh: cannot open " + path);
  out << "nodes " << domain.node_count() << " faces " << domain.elements.rows() << "\n";
  for (int i = 0; i < domain.node_count(); ++i)
    out << "v " << fmt_exact(domain.node_coords(i, 0)) << " " << fmt_exact(domain.node_coords(i, 1))
        << " " << fmt_exact(domain.node_coords(i, 2)) << "\n";
  for (int i = 0; i < domain.elements.rows(); ++i)
    out << "f " << domain.elements(i, 0) << " " << domain.elements(i, 1) << " " << domain.elements(i, 2) << "\n";
  if (!out) throw std::runtime_error("save_mesh: write failed for " + path);
}

namespace {

SparseOperator grid_laplacian(const SpatialDomain& d) {
  const int nx = d.nx, ny = d.ny;
  const double w = 1.0 / (d.h * d.h);
  TripletBuilder b;
  for (int iy = 0; iy < ny; ++iy)
    for (int ix = 0; ix < nx; ++ix) {
      const int id = iy * nx + ix;
      // Mirror ghosts: an out-of-range neighbor is replaced by the opposite
      // in-range neighbor, which keeps constants in the null space.
      auto neighbor = [&](int jx, int jy, int mx, int my) {
        if (jx < 0 || jx >= nx) jx = mx;
        if (jy < 0 || jy >= ny) jy = my;
        return jy * nx + jx;
      };
      b.add(id, id, -4.0 * w);
      b.add(id, neighbor(ix - 1, iy, ix + 1, iy), w);
      b.add(id, neighbor(ix + 1, iy, ix - 1, iy), w);
      b.add(id, neighbor(ix, iy - 1, ix, iy + 1), w);
      b.add(id, neighbor(ix, iy + 1, ix, iy - 1), w);
    }
  return std::move(b).finish(nx * ny, nx * ny);
}

// Meyer-style mixed Voronoi vertex areas.
Eigen::VectorXd voronoi_areas(const SpatialDomain& d) {
  const int n = d.node_count();
  Eigen::VectorXd area = Eigen::VectorXd::Zero(n);
  for (int f = 0; f < d.elements.rows(); ++f) {
    const int i0 = d.elements(f, 0), i1 = d.elements(f, 1), i2 = d.elements(f, 2);
    Eigen::Vector3d p0 = d.node_coords.row(i0), p1 = d.node_coords.row(i1), p2 = d.node_coords.row(i2);
    const double a2 = (p1 - p2).squaredNorm();  // opposite vertex 0
    const double b2 = (p0 - p2).squaredNorm();
    const double c2 = (p0 - p1).squaredNorm();
    const double tri_area = 0.5 * (p1 - p0).cross(p2 - p0).norm();
    if (tri_area <= 0.0) throw std::runtime_error("laplacian_operator: degenerate triangle " + std::to_string(f));
    const double cot0 = (b2 + c2 - a2) / (4.0 * tri_area);  // cot of the interior angle at each vertex
    const double cot1 = (a2 + c2 - b2) / (4.0 * tri_area);
    const double cot2 = (a2 + b2 - c2) / (4.0 * tri_area);
    if (cot0 <= 0 || cot1 <= 0 || cot2 <= 0) {
      // Obtuse triangle: half the area to the obtuse corner, quarters elsewhere.
      const int obtuse = cot0 <= 0 ? 0 : (cot1 <= 0 ? 1 : 2);
      for (int k = 0; k < 3; ++k)
        area[d.elements(f, k)] += (k == obtuse ? 0.5 : 0.25) * tri_area;
    } else {
      area[i0] += (b2 * cot1 + c2 * cot2) / 8.0;
      area[i1] += (a2 * cot0 + c2 * cot2) / 8.0;
      area[i2] += (a2 * cot0 + b2 * cot1) / 8.0;
    }
  }
  return area;
}

SparseOperator mesh_laplacian(const SpatialDomain& d) {
  const int n = d.node_count();
  std::map<std::pair<int, int>, double> w;  // cotangent edge weights
  for (int f = 0; f < d.elements.rows(); ++f) {
    const int v[3] = {d.elements(f, 0), d.elements(f, 1), d.elements(f, 2)};
    Eigen::Vector3d p[3];
    for (int k = 0; k < 3; ++k) p[k] = d.node_coords.row(v[k]);
    const double tri_area = 0.5 * (p[1] - p[0]).cross(p[2] - p[0]).norm();
    if (tri_area <= 0.0) throw std::runtime_error("laplacian_operator: degenerate triangle " + std::to_string(f));
    for (int k = 0; k < 3; ++k) {
      const int a = v[(k + 1) % 3], b = v[(k + 2) % 3];
      const double la2 = (p[(k + 1) % 3] - p[k]).squaredNorm();
      const double lb2 = (p[(k + 2) % 3] - p[k]).squaredNorm();
      const double lc2 = (p[(k + 1) % 3] - p[(k + 2) % 3]).squaredNorm();
      const double cot = (la2 + lb2 - lc2) / (4.0 * tri_area);  // angle at v[k], opposite edge (a,b)
      w[{std::min(a, b), std::max(a, b)}] += 0.5 * cot;
    }
  }

  const Eigen::VectorXd area = voronoi_areas(d);
  TripletBuilder b;
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
  for (const auto& [e, cw] : w) {
    // Clamp keeps near-degenerate triangles from flipping the sign structure;
    // the symmetric area scaling preserves both symmetry and zero row sums.
    const double weight = std::max(cw, 1e-8) / std::sqrt(area[e.first] * area[e.second]);
    b.add(e.first, e.second, weight);
    b.add(e.second, e.first, weight);
    diag[e.first] -= weight;
    diag[e.second] -= weight;
  }
  for (int i = 0; i < n; ++i)
    if (diag[i] != 0.0) b.add(i, i, diag[i]);
  return std::move(b).finish(n, n);
}

}  // namespace

SparseOperator laplacian_operator(const SpatialDomain& domain) {
  return domain.kind == DomainKind::Grid2D ? grid_laplacian(domain) : mesh_laplacian(domain);
}

SparseOperator boundary_gradient_operator(const SpatialDomain& domain) {
  const int nb = static_cast<int>(domain.boundary_nodes.size());
  if (domain.kind == DomainKind::Grid2D) {
    const int nx = domain.nx;
    TripletBuilder b;
    for (int k = 0; k < nb; ++k) {
      const int id = domain.boundary_nodes[k];
      const int ix = id % nx, iy = id / nx;
      const Eigen::Vector2d nrm = domain.boundary_normals.row(k);
      // Per axis: one-sided difference toward the interior, weighted by the
      // normal component. du/dn = nx*du/dx + ny*du/dy.
      if (nrm[0] != 0.0) {
        const int dir = (ix == 0) ? 1 : -1;  // interior direction along x
        const double c = nrm[0] * dir / domain.h;
        b.add(k, iy * nx + (ix + dir), c);
        b.add(k, id, -c);
      }
      if (nrm[1] != 0.0) {
        const int dir = (iy == 0) ? 1 : -1;
        const double c = nrm[1] * dir / domain.h;
        b.add(k, (iy + dir) * nx + ix, c);
        b.add(k, id, -c);
      }
    }
    return std::move(b).finish(nb, domain.node_count());
  }

  // Trimesh. Closed surfaces produce an empty operator.
  TripletBuilder b;
  if (nb == 0) return std::move(b).finish(0, domain.node_count());

  // Adjacency from triangles.
  std::vector<std::vector<int>> adj(domain.node_count());
  for (int f = 0; f < domain.elements.rows(); ++f)
    for (int k = 0; k < 3; ++k) {
      int a = domain.elements(f, k), c = domain.elements(f, (k + 1) % 3);
      adj[a].push_back(c);
      adj[c].push_back(a);
    }

  for (int k = 0; k < nb; ++k) {
    const int id = domain.boundary_nodes[k];
    const Eigen::Vector3d nrm = domain.boundary_normals.row(k);
    const Eigen::Vector3d p = domain.node_coords.row(id);
    // Most-inward neighbor: maximal projection of (p - p_j) onto the
    // outward normal. One-sided difference over the projected distance.
    int best = -1;
    double best_proj = 0.0;
    for (int j : adj[id]) {
      Eigen::Vector3d q = domain.node_coords.row(j);
      const double proj = nrm.dot(p - q);
      if (proj > best_proj) {
        best_proj = proj;
        best = j;
      }
    }
    if (best < 0) throw std::runtime_error("boundary_gradient_operator: no inward neighbor for node " + std::to_string(id));
    b.add(k, id, 1.0 / best_proj);
    b.add(k, best, -1.0 / best_proj);
  }
  return std::move(b).finish(nb, domain.node_count());
}

}  // namespace ecgi::geometry
