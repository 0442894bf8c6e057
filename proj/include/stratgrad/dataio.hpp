#pragma once

#include "stratgrad/types.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace stratgrad {

class IdxError : public std::runtime_error {
 public:
  enum class Kind { Io, BadMagic, Truncated, DimensionMismatch };

  IdxError(Kind kind, std::size_t offset, const std::string& what)
      : std::runtime_error(what), kind_(kind), offset_(offset) {}

  Kind kind() const { return kind_; }
  /// Byte offset in the (decompressed) stream where the problem was found.
  std::size_t offset() const { return offset_; }

 private:
  Kind kind_;
  std::size_t offset_;
};

struct IdxImages {
  std::size_t count = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> pixels;  // count * rows * cols, image-major
};

/// IDX image file (magic 0x00000803, big-endian dims). Gzip input is detected
/// from its magic bytes and decompressed on the fly.
IdxImages read_idx_images(const std::filesystem::path& path);
/// IDX label file (magic 0x00000801).
std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path);

void write_idx_images(const IdxImages& images, const std::filesystem::path& path);
void write_idx_labels(std::span<const std::uint8_t> labels, const std::filesystem::path& path);

struct LabeledDataset {
  RowMatrixXd features;  // n x d, values in [0, 1]
  std::vector<int> labels;
  std::vector<std::vector<std::size_t>> class_index;  // row indices per class, ascending

  std::size_t size() const { return labels.size(); }
  std::size_t num_classes() const { return class_index.size(); }
  std::size_t class_size(std::size_t c) const { return class_index[c].size(); }
};

/// Flattens images to rows, scales bytes by 1/255 and indexes classes 0..num_classes-1.
LabeledDataset to_dataset(const IdxImages& images, std::span<const std::uint8_t> labels, std::size_t num_classes = 10);

/// Builds the class index from features and labels; throws on a label out of range.
LabeledDataset make_dataset(RowMatrixXd features, std::vector<int> labels, std::size_t num_classes);

/// `per_class` rows drawn without replacement from every class, kept in original row order.
LabeledDataset subsample(const LabeledDataset& data, std::size_t per_class, std::uint64_t seed);

/// Rows `rows` of `data`, in the given order.
struct Batch {
  RowMatrixXd features;
  std::vector<int> labels;
};
Batch gather(const LabeledDataset& data, std::span<const std::size_t> rows);

/// MNIST train/test pair from a directory holding the standard file names
/// (optionally with a .gz suffix).
struct MnistFiles {
  LabeledDataset train;
  LabeledDataset test;
};
MnistFiles load_mnist(const std::filesystem::path& dir);
/// $MNIST_DIR, or empty when unset.
std::filesystem::path default_mnist_dir();

/// 17 significant digits; parses back to the same double.
std::string format_double(double v);

struct Series {
  std::string name;
  std::vector<double> values;
};

/// One column per series under a header of series names. Throws on empty or
/// unequal-length input. Written through a `.partial` file and renamed.
void write_csv(const std::filesystem::path& path, std::span<const Series> series);
std::vector<Series> read_csv(const std::filesystem::path& path);

/// Generic table writer with the same atomic-write behavior.
void write_table(const std::filesystem::path& path, const std::vector<std::string>& header,
                 const std::vector<std::vector<std::string>>& rows);

struct PlotLabels {
  std::string title;
  std::string x_label = "iteration";
  std::string y_label;
};

/// Standalone SVG 1.1 line chart, x = 1..n, one polyline per series plus a legend.
void write_svg_lineplot(const std::filesystem::path& path, std::span<const Series> series, const PlotLabels& labels = {});

struct RunManifest {
  std::string subcommand;
  std::vector<std::pair<std::string, std::string>> config;
  std::uint64_t seed = 0;
  std::string version;
  double wall_seconds = 0.0;
  std::vector<std::filesystem::path> outputs;
};

/// key=value lines; throws if a listed output does not exist.
void write_manifest(const std::filesystem::path& path, const RunManifest& manifest);

}  // namespace stratgrad
