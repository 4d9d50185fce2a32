#pragma once

#include <array>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "grda/data.hpp"
#include "grda/model.hpp"
#include "grda/tensor.hpp"

namespace grda {

struct Projection {
  std::vector<std::array<double, 2>> coords;
  std::vector<int> class_labels;
  std::vector<int> domain_labels;
  std::array<double, 2> variances{0.0, 0.0};  // eigenvalues of the two components
  bool degenerate = false;                    // no spread: coordinates are zeros
  bool converged = true;
};

/// Two leading principal components of the rows of `points` [n x d], n >= 3.
/// Rows are centred; each direction's first nonzero loading is positive.
Projection project_points(const Tensor& points);

/// PCA of the model's latent vectors for the chosen split ("train", "val"
/// or "all") of every dataset, in dataset order.
Projection project_latent(const ModelParams& params, std::span<const DomainDataset> datasets,
                          const std::string& split = "all");

/// Rows "x,y,class,domain".
void write_projection_csv(std::ostream& out, const Projection& projection);

}  // namespace grda
