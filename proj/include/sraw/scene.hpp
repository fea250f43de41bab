#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sraw/error.hpp"
#include "sraw/image.hpp"
#include "sraw/rng.hpp"

namespace sraw {

struct Chip {
  GrayImage image;
  Mask mask;
  std::size_t label = 0;
  std::string id;
};

// ---------------------------------------------------------------- PGM

/// Binary P5 PGM, maxval 255 or 65535; 16-bit samples are big-endian.
inline void save_pgm(const RealGrid& img, const std::filesystem::path& path, int bit_depth = 16) {
  if (bit_depth != 8 && bit_depth != 16)
    throw InvalidInput("save_pgm: bit depth must be 8 or 16");
  const unsigned maxval = bit_depth == 8 ? 255u : 65535u;
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os)
    throw IoError("cannot open " + path.string() + " for writing");
  os << "P5\n" << img.width() << ' ' << img.height() << '\n' << maxval << '\n';
  std::vector<unsigned char> payload;
  payload.reserve(img.size() * (bit_depth / 8));
  for (double v : img.data()) {
    const auto q = static_cast<unsigned>(std::lround(std::clamp(v, 0.0, 1.0) * maxval));
    if (bit_depth == 16)
      payload.push_back(static_cast<unsigned char>(q >> 8));
    payload.push_back(static_cast<unsigned char>(q & 0xff));
  }
  os.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (!os)
    throw IoError("write failed for " + path.string());
}

inline void save_mask_pgm(const Mask& mask, const std::filesystem::path& path) {
  RealGrid g(mask.height(), mask.width());
  for (std::size_t i = 0; i < mask.size(); ++i)
    g[i] = mask[i] ? 1.0 : 0.0;
  save_pgm(g, path, 8);
}

namespace detail {
inline std::string pgm_token(const std::vector<unsigned char>& b, std::size_t& pos, const std::string& name) {
  while (pos < b.size()) {
    if (b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n')
        ++pos;
    } else if (std::isspace(b[pos])) {
      ++pos;
    } else {
      break;
    }
  }
  std::string tok;
  while (pos < b.size() && !std::isspace(b[pos]) && b[pos] != '#')
    tok.push_back(static_cast<char>(b[pos++]));
  if (tok.empty())
    throw FormatError(name + ": truncated PGM header");
  return tok;
}

inline unsigned long pgm_number(const std::string& tok, const std::string& name) {
  if (tok.empty() || !std::all_of(tok.begin(), tok.end(), [](unsigned char ch) { return std::isdigit(ch); }))
    throw FormatError(name + ": bad PGM header field '" + tok + "'");
  return std::stoul(tok);
}
} // namespace detail

/// Loads a P5 PGM and normalizes samples by maxval.
inline GrayImage load_pgm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is)
    throw IoError("cannot open image " + path.string());
  const std::vector<unsigned char> b((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  const std::string name = path.string();
  std::size_t pos = 0;
  if (detail::pgm_token(b, pos, name) != "P5")
    throw FormatError(name + ": not a binary PGM (expected magic P5)");
  const auto width = detail::pgm_number(detail::pgm_token(b, pos, name), name);
  const auto height = detail::pgm_number(detail::pgm_token(b, pos, name), name);
  const auto maxval = detail::pgm_number(detail::pgm_token(b, pos, name), name);
  if (width == 0 || height == 0 || maxval == 0 || maxval > 65535)
    throw FormatError(name + ": invalid PGM dimensions or maxval");
  if (pos >= b.size() || !std::isspace(b[pos]))
    throw FormatError(name + ": truncated PGM header");
  ++pos;
  const std::size_t bytes_per = maxval > 255 ? 2 : 1;
  const std::size_t count = width * height;
  if (b.size() - pos < count * bytes_per)
    throw FormatError(name + ": truncated PGM payload");
  std::vector<double> data(count);
  for (std::size_t i = 0; i < count; ++i) {
    unsigned q = bytes_per == 2 ? (unsigned{b[pos + 2 * i]} << 8) | b[pos + 2 * i + 1] : b[pos + i];
    if (q > maxval)
      throw FormatError(name + ": sample exceeds maxval");
    data[i] = static_cast<double>(q) / static_cast<double>(maxval);
  }
  return GrayImage(height, width, std::move(data));
}

// ---------------------------------------------------------------- masks

/// Disc dilation with the given radius in pixels.
inline Mask dilate(const Mask& m, int radius) {
  Mask out(m.height(), m.width(), 0);
  const long h = static_cast<long>(m.height()), w = static_cast<long>(m.width());
  for (long r = 0; r < h; ++r)
    for (long c = 0; c < w; ++c) {
      if (!m(r, c))
        continue;
      for (long dr = -radius; dr <= radius; ++dr)
        for (long dc = -radius; dc <= radius; ++dc) {
          if (dr * dr + dc * dc > radius * radius)
            continue;
          const long rr = r + dr, cc = c + dc;
          if (rr >= 0 && rr < h && cc >= 0 && cc < w)
            out(rr, cc) = 1;
        }
    }
  return out;
}

/// Pixels above the 90th intensity percentile, dilated by 2 px.
inline Mask threshold_mask(const RealGrid& img) {
  std::vector<double> sorted(img.data().begin(), img.data().end());
  std::sort(sorted.begin(), sorted.end());
  const double cut = sorted[static_cast<std::size_t>(0.9 * static_cast<double>(sorted.size() - 1))];
  Mask m(img.height(), img.width(), 0);
  for (std::size_t i = 0; i < img.size(); ++i)
    m[i] = img[i] > cut;
  return dilate(m, 2);
}

inline std::size_t mask_count(const Mask& m) {
  std::size_t n = 0;
  for (auto v : m.data())
    n += v != 0;
  return n;
}

// ---------------------------------------------------------------- synthetic chips

inline constexpr double kClutterMean = 0.15;

/// Radiometry of the synthetic scenes.
struct SceneParams {
  double clutter_mean = kClutterMean;
  double target_level = 0.65; ///< mean target intensity before scatterers
  double target_looks = 8.0;  ///< gamma shape of the target speckle
};
inline constexpr std::size_t kShapeCount = 8;
inline const char* const kShapeNames[kShapeCount] = {"bar", "ellipse", "L", "T", "cross", "chevron", "ring", "wedge"};

namespace detail {
// Silhouette membership in the target's local frame (a along rows, b along columns).
inline bool in_shape(std::size_t shape, double a, double b) {
  switch (shape) {
  case 0:
    return std::abs(a) <= 10.0 && std::abs(b) <= 3.0;
  case 1:
    return (a / 10.0) * (a / 10.0) + (b / 6.0) * (b / 6.0) <= 1.0;
  case 2:
    return (b >= -8.0 && b <= -4.0 && std::abs(a) <= 9.0) || (a >= 5.0 && a <= 9.0 && std::abs(b) <= 8.0);
  case 3:
    return (a >= -9.0 && a <= -5.0 && std::abs(b) <= 9.0) || (std::abs(b) <= 2.0 && std::abs(a) <= 9.0);
  case 4:
    return (std::abs(a) <= 9.0 && std::abs(b) <= 2.0) || (std::abs(b) <= 9.0 && std::abs(a) <= 2.0);
  case 5:
    return std::abs(b) <= 9.0 && std::abs(a - (0.8 * std::abs(b) - 4.0)) <= 2.0;
  case 6: {
    const double r = std::hypot(a, b);
    return r >= 5.0 && r <= 8.0;
  }
  case 7:
    return a >= -8.0 && a <= 8.0 && std::abs(b) <= (a + 8.0) * 0.55;
  default:
    return false;
  }
}

inline Chip render_chip(const SceneParams& prm, std::size_t label, std::size_t side, std::uint64_t stream,
                        std::string id) {
  Rng rng(stream);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::exponential_distribution<double> speckle(1.0);
  std::gamma_distribution<double> target_speckle(prm.target_looks, 1.0 / prm.target_looks);

  const double n = static_cast<double>(side);
  const double cu = (n - 1.0) / 2.0 + (unit(rng) * 8.0 - 4.0);
  const double cv = (n - 1.0) / 2.0 + (unit(rng) * 8.0 - 4.0);
  const double theta = (unit(rng) * 20.0 - 10.0) * std::numbers::pi / 180.0;
  const double ct = std::cos(theta), st = std::sin(theta);

  RealGrid img(side, side);
  Mask support(side, side, 0);
  for (std::size_t r = 0; r < side; ++r)
    for (std::size_t c = 0; c < side; ++c) {
      const double du = static_cast<double>(r) - cu, dv = static_cast<double>(c) - cv;
      const double a = ct * du + st * dv, b = -st * du + ct * dv;
      // classes 8 and 9 reuse the first silhouettes at 0.6 scale
      const double scale = label >= kShapeCount ? 1.0 / 0.6 : 1.0;
      support(r, c) = in_shape(label % kShapeCount, a * scale, b * scale);
      img(r, c) = prm.clutter_mean * speckle(rng);
    }
  for (std::size_t i = 0; i < img.size(); ++i)
    if (support[i])
      img[i] = prm.target_level * target_speckle(rng);

  std::vector<std::size_t> inside;
  for (std::size_t i = 0; i < support.size(); ++i)
    if (support[i])
      inside.push_back(i);
  const int scatterers = 3 + static_cast<int>(unit(rng) * 4.0);
  for (int s = 0; s < scatterers && !inside.empty(); ++s) {
    const std::size_t at = inside[static_cast<std::size_t>(unit(rng) * static_cast<double>(inside.size())) %
                                  inside.size()];
    const double amp = 0.3 + 0.15 * unit(rng);
    const double pu = static_cast<double>(at / side), pv = static_cast<double>(at % side);
    for (std::size_t r = 0; r < side; ++r)
      for (std::size_t c = 0; c < side; ++c) {
        const double d2 = (static_cast<double>(r) - pu) * (static_cast<double>(r) - pu) +
                          (static_cast<double>(c) - pv) * (static_cast<double>(c) - pv);
        if (d2 <= 16.0)
          img(r, c) += amp * std::exp(-d2 / 2.0);
      }
  }
  for (double& v : img.data())
    v = std::clamp(v, 0.0, 1.0);
  return Chip{GrayImage(std::move(img)), dilate(support, 2), label, std::move(id)};
}
} // namespace detail

/// Speckled clutter (0.15 x Exp(1)) with a class-specific bright silhouette and 3-6 point scatterers.
/// Chip k has label k mod num_classes; each chip draws from its own (seed, k) stream.
inline std::vector<Chip> generate_synthetic_dataset(std::size_t num_classes, std::size_t chips_per_class,
                                                    std::size_t chip_side, std::uint64_t seed,
                                                    const SceneParams& prm = {}) {
  if (num_classes < 2 || num_classes > kShapeCount + 2)
    throw InvalidInput("num_classes must lie in [2, 10], got " + std::to_string(num_classes));
  if (chip_side < 32)
    throw InvalidInput("chip_side must be >= 32, got " + std::to_string(chip_side));
  if (chips_per_class == 0)
    throw InvalidInput("chips_per_class must be positive");
  std::vector<Chip> chips;
  const std::size_t total = num_classes * chips_per_class;
  chips.reserve(total);
  for (std::size_t k = 0; k < total; ++k) {
    char id[32];
    std::snprintf(id, sizeof id, "chip_%05zu", k);
    chips.push_back(detail::render_chip(prm, k % num_classes, chip_side, derive_seed(seed, {0xc41b, k}), id));
  }
  return chips;
}

/// Stratified split; returns (train indices, test indices) in ascending order.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>>
stratified_split(const std::vector<Chip>& chips, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw InvalidInput("train_fraction must lie in (0,1)");
  std::map<std::size_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < chips.size(); ++i)
    by_class[chips[i].label].push_back(i);
  Rng rng(derive_seed(seed, 0x5e1));
  std::vector<std::size_t> train, test;
  for (auto& [label, idx] : by_class) {
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::lround(train_fraction * static_cast<double>(idx.size())));
    train.insert(train.end(), idx.begin(), idx.begin() + static_cast<long>(n_train));
    test.insert(test.end(), idx.begin() + static_cast<long>(n_train), idx.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {train, test};
}

// ---------------------------------------------------------------- dataset files

struct ManifestEntry {
  std::string image;
  std::string mask; ///< empty when absent
  std::size_t label = 0;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<ManifestEntry> entries;
  std::size_t num_classes = 0;
};

namespace detail {
inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}
} // namespace detail

/// Parses a manifest CSV with header image,mask,label (mask column optional).
inline DatasetManifest read_manifest(const std::filesystem::path& manifest_path) {
  std::ifstream is(manifest_path);
  if (!is)
    throw IoError("cannot open manifest " + manifest_path.string());
  DatasetManifest m;
  m.root = manifest_path.parent_path();
  std::string line;
  if (!std::getline(is, line))
    throw ParseError(manifest_path.string() + ":1: empty manifest");
  const auto header = detail::split_csv(line);
  int col_image = -1, col_mask = -1, col_label = -1;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == "image")
      col_image = static_cast<int>(i);
    else if (header[i] == "mask")
      col_mask = static_cast<int>(i);
    else if (header[i] == "label")
      col_label = static_cast<int>(i);
    else
      throw ParseError(manifest_path.string() + ":1: unknown column '" + header[i] + "'");
  }
  if (col_image < 0 || col_label < 0)
    throw ParseError(manifest_path.string() + ":1: header must contain image and label columns");

  std::set<std::string> seen;
  std::size_t max_label = 0;
  std::set<std::size_t> labels;
  for (std::size_t lineno = 2; std::getline(is, line); ++lineno) {
    if (line.empty() || line == "\r")
      continue;
    const auto f = detail::split_csv(line);
    const std::string where = manifest_path.string() + ":" + std::to_string(lineno);
    if (f.size() != header.size())
      throw ParseError(where + ": expected " + std::to_string(header.size()) + " fields, got " +
                       std::to_string(f.size()));
    ManifestEntry e;
    e.image = f[static_cast<std::size_t>(col_image)];
    if (e.image.empty())
      throw ParseError(where + ": empty image filename");
    if (col_mask >= 0)
      e.mask = f[static_cast<std::size_t>(col_mask)];
    const std::string& ls = f[static_cast<std::size_t>(col_label)];
    if (ls.empty() || !std::all_of(ls.begin(), ls.end(), [](unsigned char ch) { return std::isdigit(ch); }))
      throw ParseError(where + ": label '" + ls + "' is not a non-negative integer");
    e.label = std::stoul(ls);
    if (!seen.insert(e.image).second)
      throw ParseError(where + ": duplicate image filename " + e.image);
    max_label = std::max(max_label, e.label);
    labels.insert(e.label);
    m.entries.push_back(std::move(e));
  }
  if (m.entries.empty())
    throw ParseError(manifest_path.string() + ": manifest has no entries");
  if (labels.size() != max_label + 1)
    throw ParseError(manifest_path.string() + ": labels are not contiguous from 0");
  m.num_classes = max_label + 1;
  return m;
}

/// Loads every chip of a manifest. Missing masks fall back to threshold_mask.
inline std::vector<Chip> load_dataset(const std::filesystem::path& manifest_path) {
  const DatasetManifest m = read_manifest(manifest_path);
  std::vector<Chip> chips;
  chips.reserve(m.entries.size());
  for (const auto& e : m.entries) {
    const auto img_path = m.root / e.image;
    if (!std::filesystem::exists(img_path))
      throw IoError("missing image file " + img_path.string());
    Chip c;
    c.image = load_pgm(img_path);
    c.label = e.label;
    c.id = std::filesystem::path(e.image).stem().string();
    if (e.mask.empty()) {
      c.mask = threshold_mask(c.image);
    } else {
      const auto mask_path = m.root / e.mask;
      if (!std::filesystem::exists(mask_path))
        throw IoError("missing mask file " + mask_path.string());
      const GrayImage mi = load_pgm(mask_path);
      if (mi.height() != c.image.height() || mi.width() != c.image.width())
        throw FormatError(mask_path.string() + ": mask size differs from image");
      c.mask = Mask(mi.height(), mi.width(), 0);
      for (std::size_t i = 0; i < mi.size(); ++i)
        c.mask[i] = mi[i] > 0.5;
    }
    chips.push_back(std::move(c));
  }
  return chips;
}

/// Writes {root}/images/*.pgm (16-bit), {root}/masks/*.pgm (8-bit) and {root}/manifest.csv.
inline void write_dataset(const std::vector<Chip>& chips, const std::filesystem::path& root) {
  std::filesystem::create_directories(root / "images");
  std::filesystem::create_directories(root / "masks");
  std::ofstream manifest(root / "manifest.csv", std::ios::trunc);
  if (!manifest)
    throw IoError("cannot write " + (root / "manifest.csv").string());
  manifest << "image,mask,label\n";
  for (const auto& c : chips) {
    const std::string img = "images/" + c.id + ".pgm";
    const std::string msk = "masks/" + c.id + ".pgm";
    save_pgm(c.image, root / img, 16);
    save_mask_pgm(c.mask, root / msk);
    manifest << img << ',' << msk << ',' << c.label << '\n';
  }
  if (!manifest)
    throw IoError("write failed for manifest.csv");
}

} // namespace sraw
