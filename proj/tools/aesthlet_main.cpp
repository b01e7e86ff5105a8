#include "aesth/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <sstream>

namespace {

aesth::PipelineConfig load_config(const std::string& config_file) {
  if (config_file.empty()) return aesth::PipelineConfig{};
  return aesth::PipelineConfig::load(config_file);
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) out.push_back(tok);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"aesthlet: weakly supervised aesthetic region discovery and deep "
               "aesthetic features for tagged image corpora"};
  app.require_subcommand(1);

  std::string config_file;
  std::string workspace = "workspace";
  app.add_option("--config", config_file, "INI configuration file")
      ->envname("AESTHLET_CONFIG");
  app.add_option("--workspace", workspace, "workspace directory");

  std::string active;
  for (const auto& stage : aesth::stage_names()) {
    auto* sub = app.add_subcommand(stage, "run the '" + stage + "' pipeline stage");
    sub->callback([&active, stage] { active = stage; });
  }
  auto* all = app.add_subcommand("run-all", "run every stage in order");
  all->callback([&active] { active = "run-all"; });

  auto* sweep_cmd = app.add_subcommand("sweep", "run the pipeline over a parameter grid");
  std::string sweep_param, sweep_values, sweep_metric = "attribute_recovery";
  sweep_cmd->add_option("--param", sweep_param, "configuration parameter to vary")
      ->required();
  sweep_cmd->add_option("--values", sweep_values, "comma separated values")->required();
  sweep_cmd->add_option("--metric", sweep_metric,
                        "accuracy | precision_at_30 | attribute_recovery | nnz_A");
  sweep_cmd->callback([&active] { active = "sweep"; });

  auto* ablate_cmd = app.add_subcommand("ablate", "compare the full pipeline with a "
                                                  "reduced variant");
  std::string ablate_component;
  ablate_cmd->add_option("--component", ablate_component,
                         "no-sparsity | grid-pyramid | no-global-descriptor | "
                         "only-global-descriptor | no-branch-fc")
      ->required();
  ablate_cmd->callback([&active] { active = "ablate"; });

  auto* retarget_cmd = app.add_subcommand("retarget", "content-aware resize of one image");
  std::string rt_image, rt_out = "retargeted.png";
  int rt_w = 0, rt_h = 0;
  retarget_cmd->add_option("--image", rt_image, "corpus image id or image file path")
      ->required();
  retarget_cmd->add_option("--width", rt_w, "target width")->required();
  retarget_cmd->add_option("--height", rt_h, "target height")->required();
  retarget_cmd->add_option("--out", rt_out, "output PNG file");
  retarget_cmd->callback([&active] { active = "retarget"; });

  auto* query_cmd = app.add_subcommand("query", "retrieve images similar to a query id");
  std::string q_id, q_out = "query_results.json";
  query_cmd->add_option("--id", q_id, "query image id")->required();
  query_cmd->add_option("--out", q_out, "output JSON file");
  query_cmd->callback([&active] { active = "query"; });

  CLI11_PARSE(app, argc, argv);

  try {
    const aesth::PipelineConfig config = load_config(config_file);
    if (active == "run-all") {
      const auto artifacts = aesth::run_all(config, workspace);
      for (const auto& name : aesth::stage_names()) {
        const auto& a = artifacts.at(name);
        std::cout << name << ": " << (a.reused ? "reused " : "built  ")
                  << a.content_hash << "\n";
      }
      std::cout << "metrics " << (std::filesystem::path(workspace) / "metrics.json")
                << "\n";
    } else if (active == "sweep") {
      const auto rows = aesth::sweep(sweep_param, split_csv(sweep_values),
                                     sweep_metric, config, workspace);
      std::cout << "value," << sweep_metric << ",nnz_A\n";
      for (const auto& r : rows)
        std::cout << r.value << "," << r.metric << "," << r.nnz_a << "\n";
    } else if (active == "ablate") {
      const auto res = aesth::ablate(ablate_component, config, workspace);
      std::cout << "component: " << res.component << "\n"
                << "accuracy  full=" << res.full_accuracy
                << " variant=" << res.variant_accuracy
                << " delta=" << res.full_accuracy - res.variant_accuracy << "\n"
                << "precision full=" << res.full_precision
                << " variant=" << res.variant_precision
                << " delta=" << res.full_precision - res.variant_precision << "\n";
    } else if (active == "retarget") {
      aesth::retarget_cli(config, workspace, rt_image, rt_w, rt_h, rt_out);
      std::cout << "wrote " << rt_out << "\n";
    } else if (active == "query") {
      aesth::retrieve_cli(config, workspace, q_id, q_out);
      std::cout << "wrote " << q_out << "\n";
    } else {
      const auto artifact = aesth::run_stage(active, config, workspace);
      std::cout << active << ": " << (artifact.reused ? "reused " : "built  ")
                << artifact.content_hash << " -> " << artifact.path.string() << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "aesthlet " << active << ": error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
