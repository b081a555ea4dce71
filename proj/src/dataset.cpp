#include "divdir/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "divdir/checkpoint.hpp"
#include "divdir/random.hpp"

namespace divdir {

namespace {

constexpr char kMagic[8] = {'D', 'I', 'V', 'D', 'I', 'R', 'D', 'S'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kIdxImages = 0x00000803;
constexpr std::uint32_t kIdxLabels = 0x00000801;

std::uint32_t read_be32(std::istream& is, const std::string& what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error(what + ": truncated header");
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
}

void write_be32(std::ostream& os, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                     static_cast<char>(v)};
  os.write(b, 4);
}

std::ifstream open_in(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw std::runtime_error(p.string() + ": cannot open");
  return is;
}

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error(p.string() + ": cannot open for writing");
  return os;
}

}  // namespace

void Dataset::validate() const {
  const std::size_t d = features();
  if (classes == 0) throw std::invalid_argument("dataset: classes must be positive");
  if (labels.empty()) throw std::invalid_argument("dataset: empty");
  if (x.shape() != Shape{labels.size(), d}) {
    throw std::invalid_argument("dataset: features " + shape_str(x.shape()) + " do not match " +
                                std::to_string(labels.size()) + " x " + std::to_string(d));
  }
  for (auto l : labels)
    if (l >= classes) throw std::invalid_argument("dataset: label " + std::to_string(l) + " out of range");
}

Tensor Dataset::rows(std::span<const std::size_t> idx) const {
  const std::size_t d = features();
  Tensor out({idx.size(), d});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= size()) throw std::out_of_range("dataset: row index out of range");
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(idx[r] * d), d,
                out.data().begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  return out;
}

std::vector<std::size_t> Dataset::labels_at(std::span<const std::size_t> idx) const {
  std::vector<std::size_t> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(labels.at(i));
  return out;
}

Dataset Dataset::subset(std::span<const std::size_t> idx) const {
  if (idx.empty()) throw std::invalid_argument("dataset: empty subset");
  return {rows(idx), labels_at(idx), sample_shape, classes};
}

Dataset Dataset::head(std::size_t n) const {
  std::vector<std::size_t> idx(std::min(n, size()));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return subset(idx);
}

void Dataset::append(const Dataset& other) {
  if (other.sample_shape != sample_shape || other.classes != classes) {
    throw std::invalid_argument("dataset: cannot append data with a different layout");
  }
  std::vector<double> values(x.data().begin(), x.data().end());
  values.insert(values.end(), other.x.data().begin(), other.x.data().end());
  labels.insert(labels.end(), other.labels.begin(), other.labels.end());
  x = Tensor({labels.size(), features()}, std::move(values));
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::optional<std::size_t> limit) {
  auto is = open_in(images);
  const std::string iw = "idx images " + images.string();
  if (read_be32(is, iw) != kIdxImages) throw std::runtime_error(iw + ": bad magic (expected 0x00000803)");
  const std::size_t n = read_be32(is, iw), rows = read_be32(is, iw), cols = read_be32(is, iw);

  auto ls = open_in(labels);
  const std::string lw = "idx labels " + labels.string();
  if (read_be32(ls, lw) != kIdxLabels) throw std::runtime_error(lw + ": bad magic (expected 0x00000801)");
  const std::size_t nl = read_be32(ls, lw);
  if (nl != n) {
    throw std::runtime_error("idx: count mismatch, " + std::to_string(n) + " images vs " + std::to_string(nl) +
                             " labels");
  }
  if (n == 0 || rows == 0 || cols == 0) throw std::runtime_error(iw + ": empty image set");

  const std::size_t keep = limit ? std::min(*limit, n) : n;
  const std::size_t d = rows * cols;
  std::vector<unsigned char> pix(keep * d);
  if (!is.read(reinterpret_cast<char*>(pix.data()), static_cast<std::streamsize>(pix.size()))) {
    throw std::runtime_error(iw + ": truncated pixel data");
  }
  std::vector<unsigned char> lab(keep);
  if (!ls.read(reinterpret_cast<char*>(lab.data()), static_cast<std::streamsize>(lab.size()))) {
    throw std::runtime_error(lw + ": truncated label data");
  }
  if (keep == n) {
    // The declared counts must also match the file sizes exactly.
    if (is.peek() != std::char_traits<char>::eof()) throw std::runtime_error(iw + ": trailing bytes after pixels");
    if (ls.peek() != std::char_traits<char>::eof()) throw std::runtime_error(lw + ": trailing bytes after labels");
  }

  Dataset ds;
  ds.sample_shape = {1, rows, cols};
  ds.classes = 10;
  std::vector<double> values(pix.size());
  for (std::size_t i = 0; i < pix.size(); ++i) values[i] = pix[i] / 255.0;
  ds.x = Tensor({keep, d}, std::move(values));
  ds.labels.assign(lab.begin(), lab.end());
  for (auto l : ds.labels)
    if (l > 9) throw std::runtime_error(lw + ": label " + std::to_string(l) + " outside 0-9");
  return ds;
}

void write_idx_images(const std::filesystem::path& path, std::span<const std::uint8_t> pixels, std::size_t count,
                      std::size_t rows, std::size_t cols) {
  if (pixels.size() != count * rows * cols) throw std::invalid_argument("write_idx_images: size mismatch");
  auto os = open_out(path);
  write_be32(os, kIdxImages);
  write_be32(os, static_cast<std::uint32_t>(count));
  write_be32(os, static_cast<std::uint32_t>(rows));
  write_be32(os, static_cast<std::uint32_t>(cols));
  os.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
}

void write_idx_labels(const std::filesystem::path& path, std::span<const std::uint8_t> labels) {
  auto os = open_out(path);
  write_be32(os, kIdxLabels);
  write_be32(os, static_cast<std::uint32_t>(labels.size()));
  os.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
}

Dataset gen_synthetic(std::size_t n, std::size_t d, std::size_t classes, std::uint64_t seed, double margin) {
  if (n == 0 || d == 0 || classes == 0) throw std::invalid_argument("gen_synthetic: n, d, classes must be >= 1");
  if (!(margin > 0.0)) throw std::invalid_argument("gen_synthetic: margin must be positive");
  Rng rng(seed);

  // Centres in [0.3, 0.7]^d; blob radius at most 0.3 keeps every point inside [0,1].
  std::vector<std::vector<double>> centres(classes, std::vector<double>(d));
  for (auto& c : centres)
    for (auto& v : c) v = rng.uniform(0.3, 0.7);
  double closest = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < classes; ++a)
    for (std::size_t b = a + 1; b < classes; ++b) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += (centres[a][j] - centres[b][j]) * (centres[a][j] - centres[b][j]);
      closest = std::min(closest, std::sqrt(s));
    }
  const double radius = std::min(0.3, closest / (2.0 * (1.0 + margin)));
  const double scale = radius / std::sqrt(static_cast<double>(d));

  auto order = rng.permutation(n);
  Dataset ds;
  ds.sample_shape = {d};
  ds.classes = classes;
  ds.labels.resize(n);
  std::vector<double> values(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = order[i] % classes;
    ds.labels[i] = label;
    std::vector<double> g(d);
    double norm = 0.0;
    for (auto& v : g) {
      v = scale * rng.normal();
      norm += v * v;
    }
    norm = std::sqrt(norm);
    const double shrink = norm > radius ? radius / norm : 1.0;
    for (std::size_t j = 0; j < d; ++j) values[i * d + j] = std::clamp(centres[label][j] + shrink * g[j], 0.0, 1.0);
  }
  ds.x = Tensor({n, d}, std::move(values));
  return ds;
}

void save_dataset(const std::filesystem::path& path, const Dataset& ds, const nlohmann::json& meta) {
  ds.validate();
  const std::string header =
      nlohmann::json{{"count", ds.size()}, {"sample_shape", ds.sample_shape}, {"classes", ds.classes}, {"meta", meta}}
          .dump();
  auto os = open_out(path);
  os.write(kMagic, sizeof kMagic);
  binio::write_u32(os, kVersion);
  binio::write_u64(os, header.size());
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  binio::write_doubles(os, ds.x.data());
  for (auto l : ds.labels) binio::write_u32(os, static_cast<std::uint32_t>(l));
  if (!os) throw std::runtime_error(path.string() + ": write failed");
}

Dataset load_dataset(const std::filesystem::path& path, nlohmann::json* meta) {
  auto is = open_in(path);
  const std::string what = "dataset " + path.string();
  char magic[8];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw std::runtime_error(what + ": bad magic");
  }
  if (const auto v = binio::read_u32(is, what); v != kVersion) {
    throw std::runtime_error(what + ": unsupported version " + std::to_string(v));
  }
  std::string header(binio::read_u64(is, what), '\0');
  if (!is.read(header.data(), static_cast<std::streamsize>(header.size()))) {
    throw std::runtime_error(what + ": truncated header");
  }
  const auto j = nlohmann::json::parse(header);
  Dataset ds;
  const auto count = j.at("count").get<std::size_t>();
  ds.sample_shape = j.at("sample_shape").get<Shape>();
  ds.classes = j.at("classes").get<std::size_t>();
  ds.x = Tensor({count, shape_numel(ds.sample_shape)});
  binio::read_doubles(is, ds.x.data(), what);
  ds.labels.resize(count);
  for (auto& l : ds.labels) l = binio::read_u32(is, what);
  ds.validate();
  if (meta) *meta = j.value("meta", nlohmann::json::object());
  return ds;
}

}  // namespace divdir
