#include "stratgrad/dataio.hpp"

#include "stratgrad/rng.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace stratgrad {

namespace {

constexpr std::uint32_t kLabelMagic = 0x00000801;
constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint64_t kSubsampleStream = 0x7373;

/// Reads a whole file, gunzipping when it starts with 1f 8b.
std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IdxError(IdxError::Kind::Io, 0, "cannot open " + path.string());
  std::vector<std::uint8_t> raw((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (raw.size() < 2 || raw[0] != 0x1f || raw[1] != 0x8b) return raw;

  z_stream zs{};
  if (inflateInit2(&zs, 15 + 32) != Z_OK) throw IdxError(IdxError::Kind::Io, 0, "zlib init failed");
  zs.next_in = raw.data();
  zs.avail_in = static_cast<uInt>(raw.size());
  std::vector<std::uint8_t> out;
  std::array<std::uint8_t, 1 << 16> buf;
  int rc;
  do {
    zs.next_out = buf.data();
    zs.avail_out = static_cast<uInt>(buf.size());
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      const auto at = static_cast<std::size_t>(zs.total_out);
      inflateEnd(&zs);
      throw IdxError(IdxError::Kind::Truncated, at, "corrupt or truncated gzip stream in " + path.string());
    }
    out.insert(out.end(), buf.data(), buf.data() + (buf.size() - zs.avail_out));
  } while (rc != Z_STREAM_END);
  inflateEnd(&zs);
  return out;
}

std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t at, const std::filesystem::path& path) {
  if (at + 4 > b.size())
    throw IdxError(IdxError::Kind::Truncated, b.size(), "truncated IDX header in " + path.string());
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
         std::uint32_t{b[at + 3]};
}

void check_magic(std::uint32_t got, std::uint32_t want, const std::filesystem::path& path) {
  if (got != want) {
    char msg[128];
    std::snprintf(msg, sizeof msg, "bad IDX magic 0x%08x (expected 0x%08x) in ", got, want);
    throw IdxError(IdxError::Kind::BadMagic, 0, msg + path.string());
  }
}

void check_payload(std::size_t have, std::size_t header, std::uint64_t want, const std::filesystem::path& path) {
  if (have - header < want)
    throw IdxError(IdxError::Kind::Truncated, have,
                   "IDX payload truncated: header declares " + std::to_string(want) + " bytes, file holds " +
                       std::to_string(have - header) + " in " + path.string());
  if (have - header > want)
    throw IdxError(IdxError::Kind::DimensionMismatch, header + want,
                   "IDX payload has " + std::to_string(have - header - want) + " bytes beyond the declared dims in " +
                       path.string());
}

void put_be32(std::ostream& os, std::uint32_t v) {
  const std::array<char, 4> b = {static_cast<char>(v >> 24), static_cast<char>((v >> 16) & 0xff),
                                 static_cast<char>((v >> 8) & 0xff), static_cast<char>(v & 0xff)};
  os.write(b.data(), 4);
}

std::filesystem::path partial_path(const std::filesystem::path& path) {
  auto p = path;
  p += ".partial";
  return p;
}

/// Writes through `<path>.partial` and renames on success.
template <typename Fn>
void atomic_write(const std::filesystem::path& path, Fn&& fn) {
  const auto tmp = partial_path(path);
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    try {
      fn(os);
    } catch (...) {
      os.close();
      std::filesystem::remove(tmp);
      throw;
    }
    os.flush();
    if (!os) {
      os.close();
      std::filesystem::remove(tmp);
      throw std::runtime_error("write failed for " + path.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

std::string svg_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fmt_coord(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string fmt_tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

}  // namespace

IdxImages read_idx_images(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  check_magic(be32(bytes, 0, path), kImageMagic, path);
  IdxImages img;
  img.count = be32(bytes, 4, path);
  img.rows = be32(bytes, 8, path);
  img.cols = be32(bytes, 12, path);
  const std::uint64_t want = std::uint64_t{img.count} * img.rows * img.cols;
  check_payload(bytes.size(), 16, want, path);
  img.pixels.assign(bytes.begin() + 16, bytes.end());
  return img;
}

std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  check_magic(be32(bytes, 0, path), kLabelMagic, path);
  const std::uint64_t count = be32(bytes, 4, path);
  check_payload(bytes.size(), 8, count, path);
  return {bytes.begin() + 8, bytes.end()};
}

void write_idx_images(const IdxImages& images, const std::filesystem::path& path) {
  if (images.pixels.size() != images.count * images.rows * images.cols)
    throw std::invalid_argument("write_idx_images: pixel count does not match dims");
  atomic_write(path, [&](std::ostream& os) {
    put_be32(os, kImageMagic);
    put_be32(os, static_cast<std::uint32_t>(images.count));
    put_be32(os, static_cast<std::uint32_t>(images.rows));
    put_be32(os, static_cast<std::uint32_t>(images.cols));
    os.write(reinterpret_cast<const char*>(images.pixels.data()), static_cast<std::streamsize>(images.pixels.size()));
  });
}

void write_idx_labels(std::span<const std::uint8_t> labels, const std::filesystem::path& path) {
  atomic_write(path, [&](std::ostream& os) {
    put_be32(os, kLabelMagic);
    put_be32(os, static_cast<std::uint32_t>(labels.size()));
    os.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
  });
}

LabeledDataset make_dataset(RowMatrixXd features, std::vector<int> labels, std::size_t num_classes) {
  if (static_cast<std::size_t>(features.rows()) != labels.size())
    throw std::invalid_argument("make_dataset: " + std::to_string(features.rows()) + " rows but " +
                                std::to_string(labels.size()) + " labels");
  LabeledDataset d;
  d.class_index.resize(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes)
      throw std::invalid_argument("make_dataset: label " + std::to_string(labels[i]) + " out of range");
    d.class_index[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  d.features = std::move(features);
  d.labels = std::move(labels);
  return d;
}

LabeledDataset to_dataset(const IdxImages& images, std::span<const std::uint8_t> labels, std::size_t num_classes) {
  if (images.count != labels.size())
    throw std::invalid_argument("to_dataset: " + std::to_string(images.count) + " images but " +
                                std::to_string(labels.size()) + " labels");
  const auto n = static_cast<Eigen::Index>(images.count);
  const auto d = static_cast<Eigen::Index>(images.rows * images.cols);
  RowMatrixXd features(n, d);
  const Eigen::Map<const Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> raw(
      images.pixels.data(), n, d);
  features = raw.cast<double>() / 255.0;
  return make_dataset(std::move(features), std::vector<int>(labels.begin(), labels.end()), num_classes);
}

LabeledDataset subsample(const LabeledDataset& data, std::size_t per_class, std::uint64_t seed) {
  std::vector<std::size_t> rows;
  for (std::size_t c = 0; c < data.num_classes(); ++c) {
    const auto& idx = data.class_index[c];
    if (per_class > idx.size())
      throw std::invalid_argument("subsample: per_class " + std::to_string(per_class) + " exceeds class " +
                                  std::to_string(c) + " size " + std::to_string(idx.size()));
    Rng rng = Rng::stream(seed, {kSubsampleStream, c});
    for (auto k : rng.sample_without_replacement(idx.size(), per_class)) rows.push_back(idx[k]);
  }
  std::sort(rows.begin(), rows.end());
  auto b = gather(data, rows);
  return make_dataset(std::move(b.features), std::move(b.labels), data.num_classes());
}

Batch gather(const LabeledDataset& data, std::span<const std::size_t> rows) {
  Batch b{RowMatrixXd(static_cast<Eigen::Index>(rows.size()), data.features.cols()), {}};
  b.labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    b.features.row(static_cast<Eigen::Index>(i)) = data.features.row(static_cast<Eigen::Index>(rows[i]));
    b.labels.push_back(data.labels[rows[i]]);
  }
  return b;
}

MnistFiles load_mnist(const std::filesystem::path& dir) {
  const auto find = [&](const std::string& stem) {
    for (const auto& name : {stem, stem + ".gz"}) {
      const auto p = dir / name;
      if (std::filesystem::exists(p)) return p;
    }
    throw IdxError(IdxError::Kind::Io, 0, "missing MNIST file " + (dir / stem).string());
  };
  const auto train_images = read_idx_images(find("train-images-idx3-ubyte"));
  const auto train_labels = read_idx_labels(find("train-labels-idx1-ubyte"));
  const auto test_images = read_idx_images(find("t10k-images-idx3-ubyte"));
  const auto test_labels = read_idx_labels(find("t10k-labels-idx1-ubyte"));
  return {to_dataset(train_images, train_labels), to_dataset(test_images, test_labels)};
}

std::filesystem::path default_mnist_dir() {
  const char* env = std::getenv("MNIST_DIR");
  return env ? std::filesystem::path(env) : std::filesystem::path();
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_csv(const std::filesystem::path& path, std::span<const Series> series) {
  if (series.empty()) throw std::invalid_argument("write_csv: no series for " + path.string());
  const std::size_t n = series.front().values.size();
  if (n == 0) throw std::invalid_argument("write_csv: empty series for " + path.string());
  for (const auto& s : series)
    if (s.values.size() != n) throw std::invalid_argument("write_csv: series '" + s.name + "' has a different length");
  std::vector<std::string> header;
  for (const auto& s : series) header.push_back(s.name);
  std::vector<std::vector<std::string>> rows(n);
  for (std::size_t i = 0; i < n; ++i)
    for (const auto& s : series) rows[i].push_back(format_double(s.values[i]));
  write_table(path, header, rows);
}

std::vector<Series> read_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("read_csv: cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("read_csv: empty file " + path.string());
  std::vector<Series> out;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back({cell, {}});
  }
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    std::stringstream ss(line);
    std::string cell;
    std::size_t col = 0;
    while (std::getline(ss, cell, ',')) {
      if (col >= out.size()) throw std::runtime_error("read_csv: too many cells on line " + std::to_string(line_no));
      out[col++].values.push_back(std::strtod(cell.c_str(), nullptr));
    }
    if (col != out.size()) throw std::runtime_error("read_csv: too few cells on line " + std::to_string(line_no));
  }
  return out;
}

void write_table(const std::filesystem::path& path, const std::vector<std::string>& header,
                 const std::vector<std::vector<std::string>>& rows) {
  if (header.empty()) throw std::invalid_argument("write_table: empty header for " + path.string());
  atomic_write(path, [&](std::ostream& os) {
    for (std::size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << header[i];
    os << '\n';
    for (const auto& r : rows) {
      if (r.size() != header.size()) throw std::invalid_argument("write_table: ragged row in " + path.string());
      for (std::size_t i = 0; i < r.size(); ++i) os << (i ? "," : "") << r[i];
      os << '\n';
    }
  });
}

void write_svg_lineplot(const std::filesystem::path& path, std::span<const Series> series, const PlotLabels& labels) {
  if (series.empty()) throw std::invalid_argument("write_svg_lineplot: no series for " + path.string());
  const std::size_t n = series.front().values.size();
  if (n == 0) throw std::invalid_argument("write_svg_lineplot: empty series for " + path.string());
  double lo = series.front().values.front(), hi = lo;
  for (const auto& s : series) {
    if (s.values.size() != n)
      throw std::invalid_argument("write_svg_lineplot: series '" + s.name + "' has a different length");
    for (double v : s.values) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (hi == lo) {
    hi += 0.5;
    lo -= 0.5;
  }
  static constexpr std::array<const char*, 8> kColors = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                                         "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  const double width = 800, height = 480, left = 80, right = 160, top = 40, bottom = 60;
  const double pw = width - left - right, ph = height - top - bottom;
  const auto x_of = [&](std::size_t i) { return left + (n == 1 ? pw / 2 : pw * static_cast<double>(i) / static_cast<double>(n - 1)); };
  const auto y_of = [&](double v) { return top + ph * (hi - v) / (hi - lo); };

  atomic_write(path, [&](std::ostream& os) {
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
       << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << width << "\" height=\"" << height
       << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n"
       << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
       << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">"
       << svg_escape(labels.title) << "</text>\n"
       << "<g stroke=\"black\" stroke-width=\"1\">\n"
       << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph << "\"/>\n"
       << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph << "\"/>\n"
       << "</g>\n<g font-family=\"sans-serif\" font-size=\"11\">\n";
    for (int t = 0; t <= 4; ++t) {
      const double v = lo + (hi - lo) * t / 4.0;
      os << "<text x=\"" << left - 6 << "\" y=\"" << fmt_coord(y_of(v) + 4) << "\" text-anchor=\"end\">" << fmt_tick(v)
         << "</text>\n";
    }
    const std::size_t step = std::max<std::size_t>(1, n / 10);
    for (std::size_t i = 0; i < n; i += step)
      os << "<text x=\"" << fmt_coord(x_of(i)) << "\" y=\"" << top + ph + 16 << "\" text-anchor=\"middle\">" << i + 1
         << "</text>\n";
    os << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 16 << "\" text-anchor=\"middle\">"
       << svg_escape(labels.x_label) << "</text>\n"
       << "<text x=\"18\" y=\"" << top + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
       << top + ph / 2 << ")\">" << svg_escape(labels.y_label) << "</text>\n</g>\n";
    for (std::size_t s = 0; s < series.size(); ++s) {
      const char* color = kColors[s % kColors.size()];
      os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
      for (std::size_t i = 0; i < n; ++i)
        os << (i ? " " : "") << fmt_coord(x_of(i)) << ',' << fmt_coord(y_of(series[s].values[i]));
      os << "\"/>\n";
      const double ly = top + 16 + 20 * static_cast<double>(s);
      os << "<line x1=\"" << left + pw + 16 << "\" y1=\"" << ly << "\" x2=\"" << left + pw + 40 << "\" y2=\"" << ly
         << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n"
         << "<text x=\"" << left + pw + 46 << "\" y=\"" << ly + 4
         << "\" font-family=\"sans-serif\" font-size=\"12\">" << svg_escape(series[s].name) << "</text>\n";
    }
    os << "</svg>\n";
  });
}

void write_manifest(const std::filesystem::path& path, const RunManifest& m) {
  for (const auto& out : m.outputs)
    if (!std::filesystem::exists(out)) throw std::runtime_error("write_manifest: listed output missing: " + out.string());
  atomic_write(path, [&](std::ostream& os) {
    os << "subcommand=" << m.subcommand << '\n'
       << "seed=" << m.seed << '\n'
       << "version=" << m.version << '\n';
    for (const auto& [k, v] : m.config) os << "config." << k << '=' << v << '\n';
    char wall[32];
    std::snprintf(wall, sizeof wall, "%.3f", m.wall_seconds);
    os << "wall_seconds=" << wall << '\n';
    for (const auto& out : m.outputs) os << "output=" << out.filename().string() << '\n';
  });
}

}  // namespace stratgrad
