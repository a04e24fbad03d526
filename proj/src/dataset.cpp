#include "pbatch/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "pbatch/model_io.hpp"

namespace pbatch {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t off, const std::string& name) {
  if (off + 4 > b.size()) throw std::runtime_error(name + ": truncated IDX header");
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

void put_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}

bool parse_float(std::string_view s, float& out) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.empty()) return false;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size();
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto img = read_file(images);
  const auto lab = read_file(labels);
  const std::string iname = images.string();
  const std::string lname = labels.string();
  if (read_be32(img, 0, iname) != kImageMagic) {
    throw std::runtime_error(iname + ": not an IDX image file (magic 0x00000803)");
  }
  if (read_be32(lab, 0, lname) != kLabelMagic) {
    throw std::runtime_error(lname + ": not an IDX label file (magic 0x00000801)");
  }
  const std::uint64_t n = read_be32(img, 4, iname);
  const std::uint64_t rows = read_be32(img, 8, iname);
  const std::uint64_t cols = read_be32(img, 12, iname);
  const std::uint64_t dim = rows * cols;
  if (img.size() - 16 != n * dim) {
    throw std::runtime_error(iname + ": expected " + std::to_string(n * dim) + " pixel bytes, found " +
                             std::to_string(img.size() - 16));
  }
  const std::uint64_t nl = read_be32(lab, 4, lname);
  if (nl != n) {
    throw std::runtime_error(lname + ": " + std::to_string(nl) + " labels for " + std::to_string(n) + " images");
  }
  if (lab.size() - 8 != n) throw std::runtime_error(lname + ": label payload size mismatch");

  Dataset ds;
  ds.features = RealMatrix(n, dim);
  auto f = ds.features.values();
  for (std::size_t i = 0; i < n * dim; ++i) f[i] = static_cast<float>(img[16 + i]) / 255.0f;
  ds.labels.assign(lab.begin() + 8, lab.end());
  return ds;
}

Dataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "' for reading");
  std::vector<float> values;
  std::vector<std::uint32_t> labels;
  std::size_t dim = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::vector<float> row;
    std::string_view rest(line);
    bool ok = true;
    while (true) {
      const auto comma = rest.find(',');
      float v = 0.0f;
      if (!parse_float(rest.substr(0, comma), v)) {
        ok = false;
        break;
      }
      row.push_back(v);
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (!ok) {
      if (labels.empty() && values.empty() && lineno == 1) continue;  // header
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": non-numeric field");
    }
    if (row.size() < 2) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": need a label and at least one feature");
    }
    if (row[0] < 0 || row[0] != std::floor(row[0])) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": label must be a non-negative integer");
    }
    if (dim == 0) dim = row.size() - 1;
    if (row.size() - 1 != dim) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected " +
                               std::to_string(dim) + " features, found " + std::to_string(row.size() - 1));
    }
    labels.push_back(static_cast<std::uint32_t>(row[0]));
    values.insert(values.end(), row.begin() + 1, row.end());
  }
  Dataset ds;
  ds.features = RealMatrix(labels.size(), dim, std::move(values));
  ds.labels = std::move(labels);
  return ds;
}

std::filesystem::path default_labels_path(const std::filesystem::path& images) {
  std::string name = images.filename().string();
  auto replace = [&name](const std::string& from, const std::string& to) {
    const auto pos = name.find(from);
    if (pos == std::string::npos) return false;
    name.replace(pos, from.size(), to);
    return true;
  };
  const bool a = replace("images", "labels");
  const bool b = replace("idx3", "idx1");
  if (!a && !b) {
    throw std::invalid_argument("cannot derive a label file name from '" + images.string() +
                                "'; pass the label file explicitly");
  }
  return images.parent_path() / name;
}

Dataset load_dataset(const std::filesystem::path& path, const std::filesystem::path& labels) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "' for reading");
  unsigned char head[4] = {0, 0, 0, 0};
  in.read(reinterpret_cast<char*>(head), 4);
  const bool idx = in.gcount() == 4 && head[0] == 0 && head[1] == 0 && head[2] == 0x08 && head[3] == 0x03;
  if (idx) return load_idx(path, labels.empty() ? default_labels_path(path) : labels);
  return load_csv(path);
}

void save_idx(const Dataset& ds, std::size_t rows, std::size_t cols,
              const std::filesystem::path& images, const std::filesystem::path& labels) {
  if (rows * cols != ds.feature_dim()) throw std::invalid_argument("save_idx: rows x cols != feature dim");
  std::vector<std::uint8_t> img;
  put_be32(img, kImageMagic);
  put_be32(img, static_cast<std::uint32_t>(ds.size()));
  put_be32(img, static_cast<std::uint32_t>(rows));
  put_be32(img, static_cast<std::uint32_t>(cols));
  for (float v : ds.features.values()) {
    img.push_back(static_cast<std::uint8_t>(std::clamp(std::lround(v * 255.0f), 0L, 255L)));
  }
  std::vector<std::uint8_t> lab;
  put_be32(lab, kLabelMagic);
  put_be32(lab, static_cast<std::uint32_t>(ds.size()));
  for (auto l : ds.labels) lab.push_back(static_cast<std::uint8_t>(l));
  write_file(images, img);
  write_file(labels, lab);
}

}  // namespace pbatch
