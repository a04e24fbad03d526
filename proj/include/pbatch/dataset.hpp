#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "pbatch/matrix.hpp"

namespace pbatch {

// Labelled samples, one feature row per sample.
struct Dataset {
  RealMatrix features;
  std::vector<std::uint32_t> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t feature_dim() const { return features.cols(); }
};

// IDX image file (pixels scaled to [0, 1]) plus matching IDX label file.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

// CSV rows of "label,feature,feature,...". Blank lines and a non-numeric
// header line are skipped.
Dataset load_csv(const std::filesystem::path& path);

// Label file next to an IDX image file: "*images*" -> "*labels*", with
// "-idx3-ubyte" -> "-idx1-ubyte".
std::filesystem::path default_labels_path(const std::filesystem::path& images);

// Dispatches on content: IDX magic, else CSV. An empty `labels` path derives
// the label file for IDX inputs.
Dataset load_dataset(const std::filesystem::path& path, const std::filesystem::path& labels = {});

void save_idx(const Dataset& ds, std::size_t rows, std::size_t cols,
              const std::filesystem::path& images, const std::filesystem::path& labels);

}  // namespace pbatch
