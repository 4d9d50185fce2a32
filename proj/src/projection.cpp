#include "grda/projection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "grda/errors.hpp"
#include "grda/report.hpp"
#include "grda/training.hpp"

namespace grda {

namespace {

constexpr double kTolerance = 1e-10;
constexpr int kMaxIterations = 20000;

using Vec = std::vector<double>;

double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(const Vec& a) { return std::sqrt(dot(a, a)); }

Vec mat_vec(const std::vector<double>& cov, const Vec& v) {
  const std::size_t d = v.size();
  Vec out(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += cov[i * d + j] * v[j];
    out[i] = s;
  }
  return out;
}

// Makes `v` a unit vector orthogonal to `basis` (already orthonormal). Falls
// back to the coordinate axis with the smallest overlap when v collapses.
void orthonormalize(Vec& v, const Vec* basis) {
  for (int pass = 0; pass < 2; ++pass) {
    if (basis) {
      const double c = dot(v, *basis);
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= c * (*basis)[i];
    }
  }
  double n = norm(v);
  if (n > 1e-150) {
    for (double& x : v) x /= n;
    return;
  }
  std::size_t axis = 0;
  if (basis) {
    for (std::size_t i = 1; i < v.size(); ++i) {
      if (std::abs((*basis)[i]) < std::abs((*basis)[axis])) axis = i;
    }
  }
  std::fill(v.begin(), v.end(), 0.0);
  v[axis] = 1.0;
  if (basis) orthonormalize(v, basis);
}

void fix_sign(Vec& v) {
  for (double x : v) {
    if (std::abs(x) > 1e-12) {
      if (x < 0) {
        for (double& y : v) y = -y;
      }
      return;
    }
  }
}

}  // namespace

Projection project_points(const Tensor& points) {
  if (points.rank() != 2) throw DimensionError("project_points: expected [n x d], got " + shape_str(points.shape()));
  const std::size_t n = points.dim(0), d = points.dim(1);
  if (n < 3) throw DataError("project_points: need at least 3 samples, got " + std::to_string(n));

  std::vector<double> centered(points.data().begin(), points.data().end());
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += centered[i * d + j];
    mean /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) centered[i * d + j] -= mean;
  }
  std::vector<double> cov(d * d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = &centered[i * d];
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t b = a; b < d; ++b) cov[a * d + b] += row[a] * row[b];
    }
  }
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = a; b < d; ++b) {
      cov[a * d + b] /= static_cast<double>(n);
      cov[b * d + a] = cov[a * d + b];
    }
  }

  Projection out;
  out.coords.assign(n, {0.0, 0.0});
  double trace = 0.0;
  double scale = 0.0;
  for (std::size_t a = 0; a < d; ++a) trace += cov[a * d + a];
  for (double v : points.data()) scale = std::max(scale, std::abs(v));
  if (!(trace > 1e-24 * std::max(1.0, scale * scale))) {
    out.degenerate = true;
    return out;
  }

  // Orthogonal iteration on a two-column block with a Rayleigh-Ritz
  // rotation each round; stops when both residuals |C q - theta q| fall
  // below the tolerance relative to the leading eigenvalue.
  Vec q1(d), q2(d);
  for (std::size_t i = 0; i < d; ++i) {
    q1[i] = 1.0 + 0.001 * static_cast<double>(i);
    q2[i] = (i % 2 ? -1.0 : 1.0) + 0.01 * static_cast<double>(i);
  }
  orthonormalize(q1, nullptr);
  orthonormalize(q2, &q1);
  double theta1 = 0.0, theta2 = 0.0;
  out.converged = false;
  for (int it = 0; it < kMaxIterations; ++it) {
    Vec z1 = mat_vec(cov, q1);
    Vec z2 = mat_vec(cov, q2);
    orthonormalize(z1, nullptr);
    orthonormalize(z2, &z1);
    const Vec c1 = mat_vec(cov, z1);
    const Vec c2 = mat_vec(cov, z2);
    const double a = dot(z1, c1), b = dot(z1, c2), c = dot(z2, c2);
    const double mid = 0.5 * (a + c);
    const double rad = std::hypot(0.5 * (a - c), b);
    theta1 = mid + rad;
    theta2 = mid - rad;
    double r1 = 1.0, r2 = 0.0;  // eigenvector of the 2x2 block for theta1
    if (std::abs(b) > 0.0) {
      r1 = theta1 - c;
      r2 = b;
      const double rn = std::hypot(r1, r2);
      r1 /= rn;
      r2 /= rn;
    } else if (c > a) {
      r1 = 0.0;
      r2 = 1.0;
    }
    for (std::size_t i = 0; i < d; ++i) {
      q1[i] = r1 * z1[i] + r2 * z2[i];
      q2[i] = -r2 * z1[i] + r1 * z2[i];
    }
    const Vec cq1 = mat_vec(cov, q1);
    const Vec cq2 = mat_vec(cov, q2);
    double res1 = 0.0, res2 = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      res1 += std::pow(cq1[i] - theta1 * q1[i], 2);
      res2 += std::pow(cq2[i] - theta2 * q2[i], 2);
    }
    if (std::sqrt(std::max(res1, res2)) <= kTolerance * std::max(theta1, 1e-300)) {
      out.converged = true;
      break;
    }
  }
  fix_sign(q1);
  fix_sign(q2);
  out.variances = {std::max(theta1, 0.0), std::max(theta2, 0.0)};
  for (std::size_t i = 0; i < n; ++i) {
    double x = 0.0, y = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      x += centered[i * d + j] * q1[j];
      y += centered[i * d + j] * q2[j];
    }
    out.coords[i] = {x, y};
  }
  return out;
}

Projection project_latent(const ModelParams& params, std::span<const DomainDataset> datasets,
                          const std::string& split) {
  std::vector<double> rows;
  std::vector<int> classes, domains;
  const std::size_t width = params.config.latent_width();
  for (const auto& ds : datasets) {
    std::vector<std::size_t> idx;
    if (split == "all") {
      idx.resize(ds.samples.size());
      std::iota(idx.begin(), idx.end(), std::size_t{0});
    } else {
      idx = ds.split(split);
    }
    if (idx.empty()) continue;
    const Tensor lat = compute_latent(params, ds, idx);
    rows.insert(rows.end(), lat.data().begin(), lat.data().end());
    for (std::size_t i : idx) {
      classes.push_back(ds.samples[i].class_label);
      domains.push_back(ds.samples[i].domain_label);
    }
  }
  if (classes.size() < 3) throw DataError("project_latent: need at least 3 samples");
  Projection p = project_points(Tensor({classes.size(), width}, std::move(rows)));
  p.class_labels = std::move(classes);
  p.domain_labels = std::move(domains);
  return p;
}

void write_projection_csv(std::ostream& out, const Projection& projection) {
  out << "x,y,class,domain\n";
  for (std::size_t i = 0; i < projection.coords.size(); ++i) {
    out << format_double(projection.coords[i][0]) << ',' << format_double(projection.coords[i][1])
        << ',' << (i < projection.class_labels.size() ? projection.class_labels[i] : -1) << ','
        << (i < projection.domain_labels.size() ? projection.domain_labels[i] : -1) << '\n';
  }
}

}  // namespace grda
