// Command-line front end for the experiment pipeline.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "sraw/experiment.hpp"

namespace ex = sraw::experiment;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string data;
  bool quiet = false;
};

ex::Config resolve(const Globals& g) {
  ex::Config cfg = g.config.empty() ? ex::parse_config(nlohmann::json::object()) : ex::load_config(g.config);
  if (g.seed)
    cfg.seed = *g.seed;
  if (!g.out.empty())
    cfg.output_root = g.out;
  if (!g.data.empty())
    cfg.data.root = g.data;
  return cfg;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Space-reweighted adversarial warping on synthetic radar-like chips"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Override seeds.global");
  app.add_option("--out", g.out, "Override output.root");
  app.add_option("--data", g.data, "Override data.root");
  app.add_flag("-q,--quiet", g.quiet, "No progress output");

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic dataset");
  auto* trn = app.add_subcommand("train", "Train every configured model variant");

  auto* atk = app.add_subcommand("attack", "Attack the test split");
  std::string method = "sraw";
  std::vector<std::string> models;
  atk->add_option("--method", method, "One of: " + ex::method_list());
  atk->add_option("--model", models, "Variant name or weights file (repeatable; default: all variants)");

  auto* tra = app.add_subcommand("transfer", "Evaluate adversarial examples across models");
  std::string transfer_method = "sraw";
  std::vector<std::string> transfer_models;
  tra->add_option("--method", transfer_method, "Attack whose examples are transferred");
  tra->add_option("--model", transfer_models, "Models in the matrix (default: all variants)");

  auto* rep = app.add_subcommand("report", "Summarize records.csv files");
  std::vector<std::string> record_files;
  rep->add_option("--records", record_files, "Specific records.csv files (default: all under the run)");

  auto* cam = app.add_subcommand("gradcam", "Write a Grad-CAM heatmap");
  std::string cam_model, cam_image, cam_out;
  std::optional<std::size_t> cam_class;
  cam->add_option("--model", cam_model, "Variant name or weights file")->required();
  cam->add_option("--image", cam_image, "Input PGM")->required();
  cam->add_option("--class", cam_class, "Class index (default: predicted class)");
  cam->add_option("--out", cam_out, "Output PGM")->required();

  auto* pip = app.add_subcommand("pipeline", "gen-data, train, attack (all methods), transfer, report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    const ex::Config cfg = resolve(g);
    ex::Logger log;
    if (g.quiet)
      log.os = nullptr;
    if (*gen) {
      ex::cmd_gen_data(cfg, log);
    } else if (*trn) {
      ex::cmd_train(cfg, log);
    } else if (*atk) {
      ex::check_method(method);
      if (models.empty())
        for (const auto& v : cfg.model.variants)
          models.push_back(v.name);
      for (const auto& m : models)
        ex::cmd_attack(cfg, method, m, log);
    } else if (*tra) {
      ex::cmd_transfer(cfg, transfer_method, transfer_models, log);
    } else if (*rep) {
      std::vector<std::filesystem::path> files(record_files.begin(), record_files.end());
      ex::cmd_report(cfg, files, log);
    } else if (*cam) {
      const auto [name, params] = ex::resolve_model(cfg, cam_model);
      if (cam_class && *cam_class >= params.arch.num_classes)
        throw sraw::InvalidInput("--class " + std::to_string(*cam_class) + " out of range");
      ex::cmd_gradcam(params, cam_image, cam_class, cam_out);
    } else if (*pip) {
      ex::cmd_pipeline(cfg, log);
    }
  } catch (const sraw::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return sraw::exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
