#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "sraw/attack.hpp"
#include "sraw/error.hpp"
#include "sraw/metrics.hpp"
#include "sraw/net.hpp"
#include "sraw/rng.hpp"
#include "sraw/scene.hpp"

namespace sraw::experiment {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline const std::vector<std::string>& method_names() {
  static const std::vector<std::string> names{"sraw", "fgsm", "pgd", "mifgsm", "randwarp"};
  return names;
}

inline std::string method_list() {
  std::string s;
  for (const auto& m : method_names())
    s += (s.empty() ? "" : ", ") + m;
  return s;
}

inline void check_method(const std::string& method) {
  const auto& names = method_names();
  if (std::find(names.begin(), names.end(), method) == names.end())
    throw UsageError("unknown method '" + method + "'; valid methods: " + method_list());
}

// ---------------------------------------------------------------- config

struct DataConfig {
  std::size_t num_classes = 8;
  std::size_t chips_per_class = 100;
  std::size_t chip_side = 64;
  double train_fraction = 0.8;
  double target_level = SceneParams{}.target_level;
  double target_looks = SceneParams{}.target_looks;
  std::string root; ///< empty: <output.root>/data
};

struct VariantConfig {
  std::string name;
  std::uint32_t c1 = 8, c2 = 16, c3 = 32;
};

struct ModelConfig {
  std::vector<VariantConfig> variants{
      {"base", 8, 16, 32}, {"wide", 12, 24, 48}, {"narrow", 6, 12, 24}, {"twostage", 8, 16, 0}};
  TrainConfig train;
};

struct AttackSettings {
  SrawConfig sraw;
  PixelAttackConfig fgsm{8.0 / 255.0, 8.0 / 255.0 / 10.0, 1, PixelVariant::Fgsm, 1.0, false, 0};
  PixelAttackConfig pgd{8.0 / 255.0, 8.0 / 255.0 / 10.0, 20, PixelVariant::Pgd, 1.0, true, 0};
  PixelAttackConfig mifgsm{8.0 / 255.0, 8.0 / 255.0 / 10.0, 20, PixelVariant::MiFgsm, 1.0, false, 0};
};

struct EvalConfig {
  std::size_t max_samples = 0; ///< 0: whole test split
  std::size_t triptychs = 3;   ///< per (method, model)
  bool record_timing = false;  ///< timing breaks byte-identical reruns
  std::size_t threads = 0;     ///< 0: hardware concurrency
};

struct Config {
  DataConfig data;
  ModelConfig model;
  AttackSettings attack;
  EvalConfig eval;
  std::uint64_t seed = 7;
  std::string output_root = "runs/default";

  fs::path run_root() const { return output_root; }
  fs::path data_root() const { return data.root.empty() ? run_root() / "data" : fs::path(data.root); }
  fs::path models_dir() const { return run_root() / "models"; }
  fs::path attack_dir(const std::string& method, const std::string& model) const {
    return run_root() / "attacks" / method / model;
  }

  const VariantConfig* variant(const std::string& name) const {
    for (const auto& v : model.variants)
      if (v.name == name)
        return &v;
    return nullptr;
  }
  const PixelAttackConfig& pixel(const std::string& method) const {
    if (method == "fgsm")
      return attack.fgsm;
    if (method == "pgd")
      return attack.pgd;
    return attack.mifgsm;
  }
  Architecture architecture(const VariantConfig& v) const {
    return Architecture{v.c1, v.c2, v.c3, static_cast<std::uint32_t>(data.num_classes),
                        static_cast<std::uint32_t>(data.chip_side)};
  }

  void validate() const;
};

namespace detail {

class Reader {
public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object())
      throw InvalidInput("config: " + name() + " must be an object");
  }
  ~Reader() = default;

  /// Rejects keys that were never requested. Call after all get()s.
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key()))
        throw InvalidInput("config: unknown key '" + field(it.key()) + "'");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }
  template <typename T>
  void get(const std::string& key, T& out) {
    if (!has(key))
      return;
    const json& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean())
          throw InvalidInput("");
        out = v.get<bool>();
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<long long>() < 0))
          throw InvalidInput("");
        out = v.get<T>();
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number())
          throw InvalidInput("");
        out = v.get<T>();
      } else {
        if (!v.is_string())
          throw InvalidInput("");
        out = v.get<T>();
      }
    } catch (const InvalidInput&) {
      throw InvalidInput("config: " + field(key) + " has the wrong type");
    }
  }
  Reader child(const std::string& key) {
    seen_.insert(key);
    return Reader(j_.at(key), field(key));
  }
  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }
  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

private:
  std::string name() const { return path_.empty() ? "document" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void read_pixel(Reader r, PixelAttackConfig& p, bool iterative) {
  r.get("epsilon", p.epsilon);
  if (r.has("step"))
    r.get("step", p.step);
  else
    p.step = p.epsilon / 10.0;
  if (iterative)
    r.get("iterations", p.iterations);
  if (p.variant == PixelVariant::MiFgsm)
    r.get("decay", p.decay);
  if (p.variant == PixelVariant::Pgd)
    r.get("random_start", p.random_start);
  r.finish();
}

inline void require(bool ok, const std::string& field, const std::string& what) {
  if (!ok)
    throw InvalidInput("config: " + field + " " + what);
}

} // namespace detail

/// Parses and validates a config document. Missing keys keep their defaults.
inline Config parse_config(const json& doc) {
  Config cfg;
  detail::Reader root(doc, "");
  if (root.has("data")) {
    auto r = root.child("data");
    r.get("num_classes", cfg.data.num_classes);
    r.get("chips_per_class", cfg.data.chips_per_class);
    r.get("chip_side", cfg.data.chip_side);
    r.get("train_fraction", cfg.data.train_fraction);
    r.get("target_level", cfg.data.target_level);
    r.get("target_looks", cfg.data.target_looks);
    r.get("root", cfg.data.root);
    r.finish();
  }
  if (root.has("model")) {
    auto r = root.child("model");
    if (r.has("variants")) {
      const json& arr = r.raw("variants");
      if (!arr.is_array())
        throw InvalidInput("config: model.variants must be an array");
      cfg.model.variants.clear();
      for (std::size_t i = 0; i < arr.size(); ++i) {
        detail::Reader v(arr[i], "model.variants[" + std::to_string(i) + "]");
        VariantConfig vc;
        v.get("name", vc.name);
        v.get("c1", vc.c1);
        v.get("c2", vc.c2);
        v.get("c3", vc.c3);
        v.finish();
        cfg.model.variants.push_back(vc);
      }
    }
    r.get("learning_rate", cfg.model.train.learning_rate);
    r.get("momentum", cfg.model.train.momentum);
    r.get("batch_size", cfg.model.train.batch_size);
    r.get("epochs", cfg.model.train.epochs);
    r.finish();
  }
  if (root.has("attack")) {
    auto r = root.child("attack");
    if (r.has("sraw")) {
      auto s = r.child("sraw");
      auto& c = cfg.attack.sraw;
      s.get("iterations", c.iterations);
      s.get("step_size", c.step_size);
      s.get("decay", c.decay);
      s.get("num_warps", c.num_warps);
      s.get("jitter_sigma", c.jitter_sigma);
      s.get("r_fg", c.r_fg);
      s.get("r_bg", c.r_bg);
      s.get("mesh_h", c.mesh_h);
      s.get("mesh_w", c.mesh_w);
      s.get("fg_fraction_threshold", c.fg_fraction_threshold);
      std::string norm = c.norm == GradNorm::L1 ? "l1" : "l2";
      s.get("norm", norm);
      if (norm != "l1" && norm != "l2")
        throw InvalidInput("config: attack.sraw.norm must be \"l1\" or \"l2\"");
      c.norm = norm == "l1" ? GradNorm::L1 : GradNorm::L2;
      s.finish();
    }
    if (r.has("fgsm"))
      detail::read_pixel(r.child("fgsm"), cfg.attack.fgsm, false);
    if (r.has("pgd"))
      detail::read_pixel(r.child("pgd"), cfg.attack.pgd, true);
    if (r.has("mifgsm"))
      detail::read_pixel(r.child("mifgsm"), cfg.attack.mifgsm, true);
    r.finish();
  }
  if (root.has("eval")) {
    auto r = root.child("eval");
    r.get("max_samples", cfg.eval.max_samples);
    r.get("triptychs", cfg.eval.triptychs);
    r.get("record_timing", cfg.eval.record_timing);
    r.get("threads", cfg.eval.threads);
    r.finish();
  }
  if (root.has("seeds")) {
    auto r = root.child("seeds");
    r.get("global", cfg.seed);
    r.finish();
  }
  if (root.has("output")) {
    auto r = root.child("output");
    r.get("root", cfg.output_root);
    r.finish();
  }
  root.finish();
  cfg.validate();
  return cfg;
}

inline void Config::validate() const {
  using detail::require;
  require(data.num_classes >= 2 && data.num_classes <= 10, "data.num_classes", "must lie in [2, 10]");
  require(data.chips_per_class >= 1, "data.chips_per_class", "must be >= 1");
  require(data.chip_side >= 32, "data.chip_side", "must be >= 32");
  require(data.train_fraction > 0.0 && data.train_fraction < 1.0, "data.train_fraction", "must lie in (0, 1)");
  require(data.target_level > 0.0 && data.target_level <= 1.0, "data.target_level", "must lie in (0, 1]");
  require(data.target_looks > 0.0 && std::isfinite(data.target_looks), "data.target_looks", "must be positive");
  require(!model.variants.empty(), "model.variants", "must not be empty");
  std::set<std::string> names;
  for (std::size_t i = 0; i < model.variants.size(); ++i) {
    const auto& v = model.variants[i];
    const std::string f = "model.variants[" + std::to_string(i) + "]";
    require(!v.name.empty() && v.name.find_first_of("/\\, ") == std::string::npos, f + ".name",
            "must be a non-empty name without separators");
    require(names.insert(v.name).second, f + ".name", "duplicates '" + v.name + "'");
    try {
      architecture(v).validate();
    } catch (const InvalidInput& e) {
      throw InvalidInput("config: " + f + ": " + e.what());
    }
  }
  require(model.train.learning_rate >= 0.0 && std::isfinite(model.train.learning_rate), "model.learning_rate",
          "must be finite and >= 0");
  require(model.train.momentum >= 0.0 && model.train.momentum < 1.0, "model.momentum", "must lie in [0, 1)");
  require(model.train.batch_size >= 1, "model.batch_size", "must be >= 1");
  require(model.train.epochs >= 1, "model.epochs", "must be >= 1");
  auto wrap = [](const std::string& field, auto&& fn) {
    try {
      fn();
    } catch (const InvalidInput& e) {
      throw InvalidInput("config: " + field + ": " + e.what());
    }
  };
  wrap("attack.sraw", [&] { attack.sraw.validate(); });
  require(attack.sraw.mesh_h <= data.chip_side && attack.sraw.mesh_w <= data.chip_side, "attack.sraw.mesh_h",
          "mesh finer than the image");
  wrap("attack.fgsm", [&] { attack.fgsm.validate(); });
  wrap("attack.pgd", [&] { attack.pgd.validate(); });
  wrap("attack.mifgsm", [&] { attack.mifgsm.validate(); });
  require(!output_root.empty(), "output.root", "must not be empty");
}

inline Config load_config(const fs::path& path) {
  std::ifstream is(path);
  if (!is)
    throw IoError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return parse_config(doc);
}

/// The effective configuration, all sections spelled out.
inline json to_json(const Config& c) {
  json variants = json::array();
  for (const auto& v : c.model.variants)
    variants.push_back({{"name", v.name}, {"c1", v.c1}, {"c2", v.c2}, {"c3", v.c3}});
  auto pixel = [](const PixelAttackConfig& p, bool iterative) {
    json j{{"epsilon", p.epsilon}, {"step", p.step}};
    if (iterative)
      j["iterations"] = p.iterations;
    if (p.variant == PixelVariant::MiFgsm)
      j["decay"] = p.decay;
    if (p.variant == PixelVariant::Pgd)
      j["random_start"] = p.random_start;
    return j;
  };
  const auto& s = c.attack.sraw;
  return json{
      {"data",
       {{"num_classes", c.data.num_classes},
        {"chips_per_class", c.data.chips_per_class},
        {"chip_side", c.data.chip_side},
        {"train_fraction", c.data.train_fraction},
        {"target_level", c.data.target_level},
        {"target_looks", c.data.target_looks},
        {"root", c.data.root}}},
      {"model",
       {{"variants", variants},
        {"learning_rate", c.model.train.learning_rate},
        {"momentum", c.model.train.momentum},
        {"batch_size", c.model.train.batch_size},
        {"epochs", c.model.train.epochs}}},
      {"attack",
       {{"sraw",
         {{"iterations", s.iterations},
          {"step_size", s.step_size},
          {"decay", s.decay},
          {"num_warps", s.num_warps},
          {"jitter_sigma", s.jitter_sigma},
          {"r_fg", s.r_fg},
          {"r_bg", s.r_bg},
          {"mesh_h", s.mesh_h},
          {"mesh_w", s.mesh_w},
          {"fg_fraction_threshold", s.fg_fraction_threshold},
          {"norm", s.norm == GradNorm::L1 ? "l1" : "l2"}}},
        {"fgsm", pixel(c.attack.fgsm, false)},
        {"pgd", pixel(c.attack.pgd, true)},
        {"mifgsm", pixel(c.attack.mifgsm, true)}}},
      {"eval",
       {{"max_samples", c.eval.max_samples},
        {"triptychs", c.eval.triptychs},
        {"record_timing", c.eval.record_timing},
        {"threads", c.eval.threads}}},
      {"seeds", {{"global", c.seed}}},
      {"output", {{"root", c.output_root}}},
  };
}

// ---------------------------------------------------------------- seeds

namespace seeds {
inline constexpr std::uint64_t kData = 0xda7a;
inline constexpr std::uint64_t kSplit = 0x5b1;
inline constexpr std::uint64_t kTrain = 0x7a1;
inline std::uint64_t method_tag(const std::string& method) {
  const auto& names = method_names();
  return 0xa77 + static_cast<std::uint64_t>(std::find(names.begin(), names.end(), method) - names.begin());
}
} // namespace seeds

inline std::uint64_t data_seed(const Config& c) { return derive_seed(c.seed, seeds::kData); }
inline std::uint64_t split_seed(const Config& c) { return derive_seed(c.seed, seeds::kSplit); }
inline std::uint64_t train_seed(const Config& c, std::size_t variant_index) {
  return derive_seed(c.seed, {seeds::kTrain, variant_index});
}
/// Per-sample attack stream, independent of scheduling and of which model is attacked.
inline std::uint64_t sample_seed(const Config& c, const std::string& method, std::size_t sample_index) {
  return derive_seed(c.seed, {seeds::method_tag(method), sample_index});
}

// ---------------------------------------------------------------- CSV helpers

/// Six significant digits; "inf" for infinities, "n/a" for undefined values.
inline std::string fmt(double v) {
  if (std::isnan(v))
    return "n/a";
  if (std::isinf(v))
    return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}
inline std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : "n/a"; }

inline double parse_real(const std::string& s, const std::string& where) {
  if (s == "inf")
    return std::numeric_limits<double>::infinity();
  if (s == "-inf")
    return -std::numeric_limits<double>::infinity();
  if (s == "n/a")
    return std::numeric_limits<double>::quiet_NaN();
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size())
      throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError(where + ": '" + s + "' is not a number");
  }
}

inline std::size_t parse_count(const std::string& s, const std::string& where) {
  if (s.empty() || !std::all_of(s.begin(), s.end(), [](unsigned char ch) { return std::isdigit(ch); }))
    throw ParseError(where + ": '" + s + "' is not a non-negative integer");
  return std::stoul(s);
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline CsvTable read_csv(const fs::path& path) {
  std::ifstream is(path);
  if (!is)
    throw IoError("cannot open " + path.string());
  CsvTable t;
  std::string line;
  if (!std::getline(is, line))
    throw ParseError(path.string() + ":1: empty file");
  t.header = sraw::detail::split_csv(line);
  for (std::size_t n = 2; std::getline(is, line); ++n) {
    if (line.empty())
      continue;
    auto f = sraw::detail::split_csv(line);
    if (f.size() != t.header.size())
      throw ParseError(path.string() + ":" + std::to_string(n) + ": expected " + std::to_string(t.header.size()) +
                       " fields, got " + std::to_string(f.size()));
    t.rows.push_back(std::move(f));
  }
  return t;
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path())
    fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os)
    throw IoError("cannot write " + path.string());
  os << text;
  if (!os)
    throw IoError("write failed for " + path.string());
}

/// Path of `p` relative to `base`, with forward slashes.
inline std::string relative_to(const fs::path& p, const fs::path& base) {
  return fs::relative(fs::absolute(p), fs::absolute(base)).generic_string();
}

// ---------------------------------------------------------------- execution

/// Runs fn(i) for i in [0, n) on a few threads; the lowest-index exception is rethrown.
template <typename F>
void parallel_for(std::size_t n, std::size_t threads, F&& fn) {
  if (threads == 0)
    threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i)
      fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex m;
  std::size_t err_index = n;
  std::exception_ptr err;
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(m);
        if (i < err_index) {
          err_index = i;
          err = std::current_exception();
        }
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t)
      pool.emplace_back(worker);
  }
  if (err)
    std::rethrow_exception(err);
}

/// Quantizes to the 16-bit grid used on disk so in-memory results match reloaded files.
inline GrayImage quantize16(const RealGrid& x) {
  RealGrid q(x.height(), x.width());
  for (std::size_t i = 0; i < x.size(); ++i)
    q[i] = static_cast<double>(std::lround(std::clamp(x[i], 0.0, 1.0) * 65535.0)) / 65535.0;
  return GrayImage(std::move(q));
}

struct Dataset {
  std::vector<Chip> chips;
  std::vector<std::size_t> train, test;
};

inline Dataset load_split(const Config& cfg) {
  const fs::path manifest = cfg.data_root() / "manifest.csv";
  if (!fs::exists(manifest))
    throw IoError("dataset not found: " + manifest.string() + " (run gen-data first)");
  Dataset d;
  d.chips = load_dataset(manifest);
  for (const auto& c : d.chips) {
    if (c.label >= cfg.data.num_classes)
      throw InvalidInput("dataset label " + std::to_string(c.label) + " exceeds data.num_classes");
    if (c.image.height() != cfg.data.chip_side || c.image.width() != cfg.data.chip_side)
      throw InvalidInput("dataset chip " + c.id + " is not " + std::to_string(cfg.data.chip_side) + " px square");
  }
  std::tie(d.train, d.test) = stratified_split(d.chips, cfg.data.train_fraction, split_seed(cfg));
  return d;
}

inline std::vector<std::size_t> eval_indices(const Config& cfg, const Dataset& d) {
  std::vector<std::size_t> idx = d.test;
  if (cfg.eval.max_samples > 0 && idx.size() > cfg.eval.max_samples)
    idx.resize(cfg.eval.max_samples);
  return idx;
}

struct Logger {
  std::ostream* os = &std::cerr;
  template <typename... A>
  void operator()(const A&... a) const {
    if (os) {
      ((*os) << ... << a) << '\n';
      os->flush();
    }
  }
};

// ---------------------------------------------------------------- gen-data

inline std::size_t cmd_gen_data(const Config& cfg, const Logger& log = {}) {
  SceneParams prm;
  prm.target_level = cfg.data.target_level;
  prm.target_looks = cfg.data.target_looks;
  const auto chips =
      generate_synthetic_dataset(cfg.data.num_classes, cfg.data.chips_per_class, cfg.data.chip_side, data_seed(cfg), prm);
  write_dataset(chips, cfg.data_root());
  log("gen-data: ", chips.size(), " chips -> ", cfg.data_root().string());
  return chips.size();
}

// ---------------------------------------------------------------- train

struct TrainedModel {
  std::string name;
  NetParams params;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
};

inline std::vector<LabeledImage> labeled(const Dataset& d, const std::vector<std::size_t>& idx) {
  std::vector<LabeledImage> out;
  out.reserve(idx.size());
  for (auto i : idx)
    out.push_back({&d.chips[i].image.grid(), d.chips[i].label});
  return out;
}

inline fs::path model_path(const Config& cfg, const std::string& name) { return cfg.models_dir() / (name + ".bin"); }

/// Trains every configured variant, writes <models>/<name>.bin and <models>/accuracy.csv.
inline std::vector<TrainedModel> cmd_train(const Config& cfg, const Logger& log = {}) {
  const Dataset d = load_split(cfg);
  const auto tr = labeled(d, d.train), te = labeled(d, d.test);
  std::vector<TrainedModel> models(cfg.model.variants.size());
  parallel_for(models.size(), cfg.eval.threads, [&](std::size_t i) {
    const auto& v = cfg.model.variants[i];
    TrainResult r = train(tr, te, cfg.architecture(v), cfg.model.train, train_seed(cfg, i));
    models[i] = {v.name, std::move(r.params), r.train_accuracy, r.validation_accuracy};
  });
  fs::create_directories(cfg.models_dir());
  std::ostringstream csv;
  csv << "model,c1,c2,c3,parameters,train_accuracy,test_accuracy\n";
  for (const auto& m : models) {
    save_params(m.params, model_path(cfg, m.name));
    const auto& a = m.params.arch;
    csv << m.name << ',' << a.c1 << ',' << a.c2 << ',' << a.c3 << ',' << m.params.parameter_count() << ','
        << fmt(m.train_accuracy) << ',' << fmt(m.test_accuracy) << '\n';
    log("train: ", m.name, " test accuracy ", fmt(m.test_accuracy));
  }
  write_text(cfg.models_dir() / "accuracy.csv", csv.str());
  return models;
}

/// A model by variant name (looked up under the models directory) or by weights-file path.
inline std::pair<std::string, NetParams> resolve_model(const Config& cfg, const std::string& name_or_path) {
  if (cfg.variant(name_or_path))
    return {name_or_path, load_params(model_path(cfg, name_or_path))};
  const fs::path p(name_or_path);
  if (!fs::exists(p))
    throw IoError("model '" + name_or_path + "' is neither a configured variant nor an existing weights file");
  return {p.stem().string(), load_params(p)};
}

// ---------------------------------------------------------------- attack

struct SampleOutcome {
  EvalRecord record;
  bool success = false;
  QualityScores quality;
  double wall_seconds = std::numeric_limits<double>::quiet_NaN();
  std::size_t queries = 0;
  std::vector<double> loss_trace;
  GrayImage adversarial;
};

/// Runs one attack method on one sample; the adversarial image is quantized to 16 bits.
inline SampleOutcome attack_sample(const Config& cfg, const std::string& method, const NetClassifier& model,
                                   const Chip& chip, std::size_t sample_index) {
  const std::uint64_t seed = sample_seed(cfg, method, sample_index);
  const auto t0 = std::chrono::steady_clock::now();
  AttackResult r;
  if (method == "sraw") {
    SrawConfig c = cfg.attack.sraw;
    c.seed = seed;
    r = sraw_attack(model, chip.image, chip.label, chip.mask, c);
  } else if (method == "randwarp") {
    Rng rng(seed);
    r = random_warp_control(model, chip.image, chip.label, chip.mask, cfg.attack.sraw, rng);
  } else {
    check_method(method);
    PixelAttackConfig c = cfg.pixel(method);
    c.seed = seed;
    r = pixel_attack(model, chip.image, chip.label, c);
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  SampleOutcome o;
  o.adversarial = quantize16(r.adversarial);
  o.record = {chip.id, chip.label, model.predict(chip.image), model.predict(o.adversarial)};
  o.success = o.record.clean_prediction != o.record.adversarial_prediction;
  o.quality = quality(chip.image, o.adversarial);
  if (cfg.eval.record_timing)
    o.wall_seconds = secs;
  o.queries = r.query_count;
  o.loss_trace = std::move(r.loss_trace);
  return o;
}

inline const std::vector<std::string>& record_header() {
  static const std::vector<std::string> h{"sample_id",  "label", "clean_prediction", "adversarial_prediction",
                                          "success",    "psnr_db", "ssim",           "lpips",
                                          "wall_time_s", "queries", "benign_image",  "adversarial_image"};
  return h;
}

struct AttackRun {
  std::string method;
  std::string model;
  std::vector<SampleOutcome> outcomes;
  std::optional<double> asr;
};

/// Attacks the evaluation split with one method against one model and writes
/// attacks/<method>/<model>/{records.csv, loss_trace.csv, adv/*.pgm}.
inline AttackRun cmd_attack(const Config& cfg, const std::string& method, const std::string& model_ref,
                            const Logger& log = {}) {
  check_method(method);
  auto [model_name, params] = resolve_model(cfg, model_ref);
  const Dataset d = load_split(cfg);
  if (params.arch.num_classes != cfg.data.num_classes || params.arch.input_side != cfg.data.chip_side)
    throw InvalidInput("model '" + model_name + "' does not match the dataset geometry");
  const NetClassifier model(params);
  const auto idx = eval_indices(cfg, d);

  AttackRun run{method, model_name, std::vector<SampleOutcome>(idx.size()), std::nullopt};
  parallel_for(idx.size(), cfg.eval.threads,
               [&](std::size_t k) { run.outcomes[k] = attack_sample(cfg, method, model, d.chips[idx[k]], k); });

  const fs::path dir = cfg.attack_dir(method, model_name);
  fs::create_directories(dir / "adv");
  std::ostringstream rec, trace;
  const auto& hdr = record_header();
  for (std::size_t i = 0; i < hdr.size(); ++i)
    rec << (i ? "," : "") << hdr[i];
  rec << '\n';
  trace << "sample_id,iteration,loss\n";
  std::vector<EvalRecord> records;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const auto& o = run.outcomes[k];
    const Chip& chip = d.chips[idx[k]];
    const fs::path adv = dir / "adv" / (chip.id + ".pgm");
    save_pgm(o.adversarial, adv, 16);
    const fs::path benign = cfg.data_root() / "images" / (chip.id + ".pgm");
    rec << o.record.sample_id << ',' << o.record.label << ',' << o.record.clean_prediction << ','
        << o.record.adversarial_prediction << ',' << (o.success ? 1 : 0) << ',' << fmt(o.quality.psnr_db) << ','
        << fmt(o.quality.ssim) << ",n/a," << fmt(o.wall_seconds) << ',' << o.queries << ','
        << relative_to(benign, cfg.run_root()) << ',' << relative_to(adv, cfg.run_root()) << '\n';
    for (std::size_t t = 0; t < o.loss_trace.size(); ++t)
      trace << o.record.sample_id << ',' << t << ',' << fmt(o.loss_trace[t]) << '\n';
    records.push_back(o.record);
  }
  write_text(dir / "records.csv", rec.str());
  write_text(dir / "loss_trace.csv", trace.str());
  if (!records.empty())
    run.asr = attack_success_rate(records);
  log("attack: ", method, " on ", model_name, " over ", idx.size(), " samples, ASR ", fmt(run.asr));
  return run;
}

// ---------------------------------------------------------------- records

struct RecordRow {
  EvalRecord record;
  bool success = false;
  double psnr_db = 0.0;
  double ssim = 0.0;
  double wall_seconds = 0.0;
  fs::path benign_image;      ///< resolved against the run root
  fs::path adversarial_image; ///< resolved against the run root
};

inline std::vector<RecordRow> read_records(const fs::path& path, const fs::path& run_root) {
  const CsvTable t = read_csv(path);
  if (t.header != record_header())
    throw ParseError(path.string() + ": inconsistent record schema");
  std::vector<RecordRow> rows;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& f = t.rows[i];
    const std::string where = path.string() + ":" + std::to_string(i + 2);
    RecordRow r;
    r.record = {f[0], parse_count(f[1], where), parse_count(f[2], where), parse_count(f[3], where)};
    r.success = parse_count(f[4], where) != 0;
    r.psnr_db = parse_real(f[5], where);
    r.ssim = parse_real(f[6], where);
    r.wall_seconds = parse_real(f[8], where);
    r.benign_image = run_root / f[10];
    r.adversarial_image = run_root / f[11];
    rows.push_back(std::move(r));
  }
  return rows;
}

/// (method, model) pairs with a records file, in canonical method order then model name order.
inline std::vector<std::pair<std::string, std::string>> discover_runs(const Config& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& method : method_names()) {
    const fs::path dir = cfg.run_root() / "attacks" / method;
    if (!fs::is_directory(dir))
      continue;
    std::vector<std::string> models;
    for (const auto& e : fs::directory_iterator(dir))
      if (fs::exists(e.path() / "records.csv"))
        models.push_back(e.path().filename().string());
    std::sort(models.begin(), models.end());
    for (auto& m : models)
      out.emplace_back(method, std::move(m));
  }
  return out;
}

// ---------------------------------------------------------------- transfer

struct TransferMatrix {
  std::vector<std::string> sources; ///< surrogate names (rows)
  std::vector<std::string> targets; ///< target names (columns)
  std::vector<std::vector<double>> accuracy;
  std::vector<double> clean; ///< target accuracy on the benign images of the same samples
};

inline std::string matrix_csv(const std::vector<std::string>& rows, const std::vector<std::string>& cols,
                              const std::vector<std::vector<double>>& cells) {
  std::ostringstream csv;
  csv << "source";
  for (const auto& t : cols)
    csv << ',' << t;
  csv << '\n';
  for (std::size_t r = 0; r < rows.size(); ++r) {
    csv << rows[r];
    for (double v : cells[r])
      csv << ',' << fmt(v);
    csv << '\n';
  }
  return csv.str();
}

/// Rows: surrogates whose stored adversarial examples are replayed. Columns: target models.
/// Cells: target accuracy on those examples. Writes transfer/<method>_matrix.csv and
/// transfer/<method>_clean.csv (the same samples, unattacked).
inline TransferMatrix cmd_transfer(const Config& cfg, const std::string& method = "sraw",
                                   std::vector<std::string> model_refs = {}, const Logger& log = {}) {
  check_method(method);
  if (model_refs.empty())
    for (const auto& v : cfg.model.variants)
      model_refs.push_back(v.name);
  std::vector<std::pair<std::string, NetParams>> models;
  for (const auto& ref : model_refs)
    models.push_back(resolve_model(cfg, ref));

  TransferMatrix m;
  for (const auto& [name, p] : models)
    m.targets.push_back(name);

  auto evaluate = [&](const std::vector<GrayImage>& imgs, const std::vector<std::size_t>& labels) {
    std::vector<double> row(models.size());
    parallel_for(models.size(), cfg.eval.threads, [&](std::size_t t) {
      std::size_t hits = 0;
      for (std::size_t i = 0; i < imgs.size(); ++i)
        hits += argmax(forward(models[t].second, imgs[i])) == labels[i];
      row[t] = imgs.empty() ? std::numeric_limits<double>::quiet_NaN()
                            : static_cast<double>(hits) / static_cast<double>(imgs.size());
    });
    return row;
  };

  for (const auto& [surrogate, p] : models) {
    const fs::path rec = cfg.attack_dir(method, surrogate) / "records.csv";
    if (!fs::exists(rec))
      throw IoError("missing adversarial records for surrogate '" + surrogate + "': " + rec.string());
    const auto rows = read_records(rec, cfg.run_root());
    std::vector<GrayImage> adv, clean;
    std::vector<std::size_t> labels;
    for (const auto& r : rows) {
      if (!fs::exists(r.adversarial_image))
        throw IoError("missing adversarial image " + r.adversarial_image.string());
      adv.push_back(load_pgm(r.adversarial_image));
      if (m.clean.empty())
        clean.push_back(load_pgm(r.benign_image));
      labels.push_back(r.record.label);
    }
    if (m.clean.empty())
      m.clean = evaluate(clean, labels);
    m.sources.push_back(surrogate);
    m.accuracy.push_back(evaluate(adv, labels));
  }

  const fs::path dir = cfg.run_root() / "transfer";
  write_text(dir / (method + "_matrix.csv"), matrix_csv(m.sources, m.targets, m.accuracy));
  write_text(dir / (method + "_clean.csv"), matrix_csv({"clean"}, m.targets, {m.clean}));
  log("transfer: ", method, " matrix ", m.sources.size(), "x", m.targets.size());
  return m;
}

// ---------------------------------------------------------------- report

struct ReportRow {
  std::string method;
  std::string model;
  std::optional<double> asr;
  double mean_psnr_db = 0.0;
  double mean_ssim = 0.0;
  double mean_wall_seconds = std::numeric_limits<double>::quiet_NaN();
  std::size_t samples = 0;
};

inline double mean_of(const std::vector<double>& v) {
  if (v.empty())
    return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (double x : v)
    s += x;
  return s / static_cast<double>(v.size());
}

/// |a - b| * 5, clamped to [0, 1].
inline RealGrid amplified_difference(const RealGrid& a, const RealGrid& b, double gain = 5.0) {
  RealGrid d(a.height(), a.width());
  for (std::size_t i = 0; i < a.size(); ++i)
    d[i] = std::min(1.0, gain * std::abs(a[i] - b[i]));
  return d;
}

/// Aggregates every records file into report/summary.csv and writes triptychs
/// (benign, adversarial, 5x difference) for the first eval.triptychs samples of each run.
inline std::vector<ReportRow> cmd_report(const Config& cfg, std::vector<fs::path> record_files = {},
                                         const Logger& log = {}) {
  if (record_files.empty())
    for (const auto& [method, model] : discover_runs(cfg))
      record_files.push_back(cfg.attack_dir(method, model) / "records.csv");
  if (record_files.empty())
    throw IoError("report: no records.csv found under " + (cfg.run_root() / "attacks").string());

  std::vector<ReportRow> out;
  for (const auto& path : record_files) {
    const auto rows = read_records(path, cfg.run_root());
    ReportRow r;
    r.model = path.parent_path().filename().string();
    r.method = path.parent_path().parent_path().filename().string();
    r.samples = rows.size();
    std::vector<EvalRecord> recs;
    std::vector<double> ps, ss, ws;
    for (const auto& row : rows) {
      recs.push_back(row.record);
      ps.push_back(row.psnr_db);
      ss.push_back(row.ssim);
      if (!std::isnan(row.wall_seconds))
        ws.push_back(row.wall_seconds);
    }
    if (!recs.empty())
      r.asr = attack_success_rate(recs);
    r.mean_psnr_db = mean_of(ps);
    r.mean_ssim = mean_of(ss);
    r.mean_wall_seconds = mean_of(ws);
    out.push_back(r);

    const fs::path tdir = cfg.run_root() / "report" / "triptychs" / (r.method + "_" + r.model);
    for (std::size_t k = 0; k < std::min(cfg.eval.triptychs, rows.size()); ++k) {
      const GrayImage benign = load_pgm(rows[k].benign_image), adv = load_pgm(rows[k].adversarial_image);
      if (!benign.grid().same_shape(adv.grid()))
        throw FormatError(rows[k].adversarial_image.string() + ": size differs from the benign image");
      fs::create_directories(tdir);
      const std::string id = rows[k].record.sample_id;
      save_pgm(benign, tdir / (id + "_benign.pgm"), 8);
      save_pgm(adv, tdir / (id + "_adversarial.pgm"), 8);
      save_pgm(amplified_difference(benign, adv), tdir / (id + "_diff.pgm"), 8);
    }
  }

  std::ostringstream csv;
  csv << "method,model,asr,mean_psnr_db,mean_ssim,lpips,mean_wall_time_s,samples\n";
  for (const auto& r : out)
    csv << r.method << ',' << r.model << ',' << fmt(r.asr) << ',' << fmt(r.mean_psnr_db) << ','
        << fmt(r.mean_ssim) << ",n/a," << fmt(r.mean_wall_seconds) << ',' << r.samples << '\n';
  write_text(cfg.run_root() / "report" / "summary.csv", csv.str());
  log("report: ", out.size(), " rows -> ", (cfg.run_root() / "report" / "summary.csv").string());
  return out;
}

// ---------------------------------------------------------------- gradcam

/// Writes an 8-bit heatmap for the given class (default: the predicted class); returns the map.
inline RealGrid cmd_gradcam(const NetParams& params, const fs::path& image_path, std::optional<std::size_t> cls,
                            const fs::path& out_path) {
  const GrayImage x = load_pgm(image_path);
  const std::size_t c = cls ? *cls : argmax(forward(params, x));
  RealGrid cam = grad_cam(params, x, c);
  if (out_path.has_parent_path())
    fs::create_directories(out_path.parent_path());
  save_pgm(cam, out_path, 8);
  return cam;
}

// ---------------------------------------------------------------- pipeline

/// gen-data, train, every method against every variant, transfer of SRAW examples, report.
inline void cmd_pipeline(const Config& cfg, const Logger& log = {}) {
  cmd_gen_data(cfg, log);
  cmd_train(cfg, log);
  for (const auto& method : method_names())
    for (const auto& v : cfg.model.variants)
      cmd_attack(cfg, method, v.name, log);
  cmd_transfer(cfg, "sraw", {}, log);
  cmd_report(cfg, {}, log);
  write_text(cfg.run_root() / "config.json", to_json(cfg).dump(2) + "\n");
}

} // namespace sraw::experiment
