#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tensorslice/tensor.hpp"

namespace tslice {

enum class Split { train, test };

struct Dataset {
  Tensor inputs;            // [n, ...sample shape]
  std::vector<int> labels;  // n entries in [0, num_classes)
  int num_classes = 0;
  Split split = Split::train;

  std::size_t size() const { return labels.size(); }
  Shape sample_shape() const;
  void validate() const;
};

// Rows of `inputs` selected by index, in the given order.
Tensor gather_rows(const Tensor& inputs, const std::vector<std::size_t>& indices);
Dataset subset(const Dataset& data, const std::vector<std::size_t>& indices);

// Two interleaved spirals in the plane, labels 0/1.
Dataset make_spirals(std::size_t n, std::uint64_t seed, double noise = 0.05, double turns = 1.5,
                     Split split = Split::train);

// 1x8x8 images: each class places a Gaussian blob at its own cell of a
// 3x3 grid with positional jitter, amplitude variation and pixel noise.
Dataset make_grid_blobs(std::size_t n, int num_classes, std::uint64_t seed, double noise = 0.25,
                        Split split = Split::train);

// External dataset directory: inputs.bin (tensor blob, [n, ...]) and
// labels.txt (one integer per line).
Dataset load_dataset_dir(const std::filesystem::path& dir, Split split);

}  // namespace tslice
