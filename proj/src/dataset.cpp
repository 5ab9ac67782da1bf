#include "tensorslice/dataset.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "tensorslice/error.hpp"
#include "tensorslice/tensor_io.hpp"

namespace tslice {

Shape Dataset::sample_shape() const { return Shape(inputs.shape().begin() + 1, inputs.shape().end()); }

void Dataset::validate() const {
  if (inputs.rank() < 2) throw DataError("dataset inputs need a batch axis and a sample shape");
  if (inputs.dim(0) != labels.size())
    throw DataError("dataset has " + std::to_string(inputs.dim(0)) + " inputs but " +
                    std::to_string(labels.size()) + " labels");
  for (int l : labels)
    if (l < 0 || l >= num_classes) throw DataError("label " + std::to_string(l) + " outside [0, num_classes)");
}

Tensor gather_rows(const Tensor& inputs, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw DataError("cannot gather an empty row set");
  Shape shape = inputs.shape();
  const std::size_t row = inputs.size() / shape[0];
  shape[0] = indices.size();
  Tensor out(shape);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= inputs.dim(0)) throw DataError("row index out of range");
    std::copy_n(inputs.data().begin() + static_cast<std::ptrdiff_t>(indices[r] * row), row,
                out.data().begin() + static_cast<std::ptrdiff_t>(r * row));
  }
  return out;
}

Dataset subset(const Dataset& data, const std::vector<std::size_t>& indices) {
  Dataset out;
  out.inputs = gather_rows(data.inputs, indices);
  out.labels.reserve(indices.size());
  for (auto i : indices) out.labels.push_back(data.labels.at(i));
  out.num_classes = data.num_classes;
  out.split = data.split;
  return out;
}

Dataset make_spirals(std::size_t n, std::uint64_t seed, double noise, double turns, Split split) {
  if (n == 0) throw DataError("spirals: n must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Dataset d;
  d.inputs = Tensor({n, 2});
  d.labels.resize(n);
  d.num_classes = 2;
  d.split = split;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 2);
    const double t = 0.1 + 0.9 * std::sqrt(unit(rng));
    const double angle = 2.0 * std::numbers::pi * turns * t + label * std::numbers::pi;
    d.inputs(i, 0) = t * std::cos(angle) + noise * gauss(rng);
    d.inputs(i, 1) = t * std::sin(angle) + noise * gauss(rng);
    d.labels[i] = label;
  }
  return d;
}

Dataset make_grid_blobs(std::size_t n, int num_classes, std::uint64_t seed, double noise, Split split) {
  if (n == 0) throw DataError("grid blobs: n must be positive");
  if (num_classes < 2 || num_classes > 9) throw DataError("grid blobs support 2..9 classes");
  constexpr std::size_t side = 8;
  constexpr double centres[3] = {1.0, 3.5, 6.0};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_int_distribution<int> cell(0, 8);
  Dataset d;
  d.inputs = Tensor({n, 1, side, side});
  d.labels.resize(n);
  d.num_classes = num_classes;
  d.split = split;

  auto stamp = [&](std::size_t i, int c, double amplitude) {
    const double cy = centres[c / 3] + (unit(rng) - 0.5) * 1.4;
    const double cx = centres[c % 3] + (unit(rng) - 0.5) * 1.4;
    for (std::size_t y = 0; y < side; ++y)
      for (std::size_t x = 0; x < side; ++x) {
        const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
        d.inputs.at({i, 0, y, x}) += amplitude * std::exp(-(dx * dx + dy * dy) / 2.0);
      }
  };

  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % static_cast<std::size_t>(num_classes));
    d.labels[i] = label;
    stamp(i, label, 0.7 + 0.6 * unit(rng));
    // a weaker distractor in a random cell
    stamp(i, cell(rng), 0.2 + 0.3 * unit(rng));
    for (std::size_t p = 0; p < side * side; ++p) d.inputs[i * side * side + p] += noise * gauss(rng);
  }
  return d;
}

Dataset load_dataset_dir(const std::filesystem::path& dir, Split split) {
  Dataset d;
  d.inputs = load_tensor(dir / "inputs.bin");
  std::ifstream labels(dir / "labels.txt");
  if (!labels) throw DataError("missing labels.txt in " + dir.string());
  int l = 0;
  while (labels >> l) {
    d.labels.push_back(l);
    d.num_classes = std::max(d.num_classes, l + 1);
  }
  d.split = split;
  d.validate();
  return d;
}

}  // namespace tslice
