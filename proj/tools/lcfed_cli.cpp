#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "lcfed/experiment.hpp"
#include "lcfed/runtime.hpp"

namespace {

void print_result(const lcfed::ExperimentResult& r, const std::string& out_dir) {
  std::cout << "config " << r.config_digest << " reached round " << r.last_round;
  if (r.completed) {
    double iou = 0, assd = 0;
    for (const auto& rep : r.final_reports) {
      iou += rep.mean_iou();
      assd += rep.mean_assd();
    }
    const double k = static_cast<double>(r.final_reports.size());
    std::cout << ", final avg IoU " << iou / k << ", avg ASSD " << assd / k;
    lcfed::emit_report(out_dir);
    std::cout << "\nsummary written to " << (std::filesystem::path(out_dir) / "summary.txt").string();
  } else {
    std::cout << ", stopped; resume with: lcfed resume " << r.last_checkpoint.string();
  }
  std::cout << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Personalized federated segmentation simulator"};
  app.require_subcommand(1);

  std::string config_path, checkpoint, run_dir, data_out;
  std::vector<std::string> overrides;
  bool quiet = false;

  auto* run = app.add_subcommand("run", "Run an experiment from a config file");
  run->add_option("config", config_path, "Config file (key = value lines)")->required()->check(CLI::ExistingFile);
  run->add_option("-s,--set", overrides, "Override a config key, e.g. -s mode=fedavg -s rounds=10");
  run->add_flag("-q,--quiet", quiet, "No per-round progress");

  auto* resume = app.add_subcommand("resume", "Continue a run from a checkpoint");
  resume->add_option("checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  resume->add_option("-s,--set", overrides, "Override a run control (out_dir, workers, stop_after, ...)");
  resume->add_flag("-q,--quiet", quiet, "No per-round progress");

  auto* report = app.add_subcommand("report", "Write summary.txt and curves.csv for a run directory");
  report->add_option("run_dir", run_dir, "Run directory")->required()->check(CLI::ExistingDirectory);

  lcfed::BenchmarkSpec spec;
  auto* gen = app.add_subcommand("gen-data", "Write the synthetic benchmark as PGM files plus a manifest");
  gen->add_option("--seed", spec.seed, "Benchmark seed")->capture_default_str();
  gen->add_option("--out", data_out, "Output directory")->required();
  gen->add_option("--sites", spec.sites, "Number of sites")->capture_default_str();
  gen->add_option("--train", spec.train_per_site, "Training samples per site")->capture_default_str();
  gen->add_option("--test", spec.test_per_site, "Test samples per site")->capture_default_str();
  gen->add_option("--size", spec.image_size, "Image side length")->capture_default_str();
  gen->add_option("--classes", spec.classes, "Mask classes")->capture_default_str();

  CLI11_PARSE(app, argc, argv);
  lcfed::tune_allocator();

  try {
    std::ostream* log = quiet ? nullptr : &std::cerr;
    if (*run) {
      const auto cfg = lcfed::load_config(config_path, overrides);
      print_result(lcfed::run_experiment(cfg, log), cfg.out_dir);
    } else if (*resume) {
      const auto res = lcfed::resume_experiment(checkpoint, overrides, log);
      auto cfg = lcfed::parse_config(lcfed::CheckpointFile::read(checkpoint).header().config_text);
      for (const auto& o : overrides) lcfed::apply_setting(cfg, o);
      print_result(res, cfg.out_dir);
    } else if (*report) {
      lcfed::emit_report(run_dir);
      std::ifstream s(std::filesystem::path(run_dir) / "summary.txt");
      std::cout << s.rdbuf();
    } else if (*gen) {
      std::vector<lcfed::Sample> all;
      for (auto& site : lcfed::generate_benchmark(spec)) {
        all.insert(all.end(), site.train.begin(), site.train.end());
        all.insert(all.end(), site.test.begin(), site.test.end());
      }
      const auto manifest = lcfed::write_dataset(data_out, all);
      std::cout << "wrote " << all.size() << " samples; manifest " << manifest.string() << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
