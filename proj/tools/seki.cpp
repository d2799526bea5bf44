#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "seki/experiments.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace seki;

namespace {

struct Common {
  std::string config;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::string cache;
};

ExperimentConfig read_config(const fs::path& path, const std::string& preset, std::optional<std::uint64_t> seed) {
  std::ifstream is(path);
  if (!is) throw InvalidArgument("cannot open config " + path.string());
  json j = json::parse(is);
  if (seed) j["seed"] = *seed;
  return parse_config(j, preset);
}

std::optional<fs::path> cache_dir(const Common& c) {
  if (c.cache == "none") return std::nullopt;
  return c.cache.empty() ? fs::path(c.out) / "truth-cache" : fs::path(c.cache);
}

void print_report(const ExperimentReport& rep) {
  std::printf("%-14s %12s %12s %12s %s\n", "name", "truth", "mean", "std", "surviving");
  for (const auto& r : rep.coefficients)
    std::printf("%-14s %12.5g %12.5g %12.5g %s\n", r.name.c_str(), r.truth, r.mean, r.std, r.surviving ? "yes" : "-");
  for (std::size_t b = 0; b < rep.batches.size(); ++b) {
    const auto& h = rep.batches[b].history;
    std::printf("batch %zu: %zu coordinates, %d iterations, misfit %.4g, stop: %s\n", b + 1,
                rep.survivors_per_batch[b], rep.batches[b].iterations, h.empty() ? 0.0 : h.back().misfit,
                rep.batches[b].stop_reason.c_str());
  }
  if (rep.diagnostics.contains("invariant_measure_l1"))
    std::cout << "invariant-measure L1: " << rep.diagnostics["invariant_measure_l1"].dump() << "\n";
  if (rep.diagnostics.contains("heldout"))
    for (const auto& h : rep.diagnostics["heldout"])
      std::cout << "held-out " << h["initial_condition"].dump() << " deviation " << h["deviation"].dump() << "\n";
}

ExperimentReport invert(const ExperimentConfig& cfg, Mode mode, const fs::path& out, const Common& c) {
  RunOptions opt;
  opt.out_dir = out;
  opt.cache_dir = cache_dir(c);
  const auto t0 = std::chrono::steady_clock::now();
  auto rep = run_case(cfg, mode, opt);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("== %s (%s) -> %s  [%.1f s]\n", cfg.name.c_str(), to_string(mode).c_str(), out.string().c_str(), secs);
  print_report(rep);
  return rep;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse ensemble Kalman inversion for dictionary-based model discovery"};
  app.require_subcommand(1);
  Common c;
  std::string mode = "sparse";
  std::string configs_dir = "configs";

  auto add_common = [&](CLI::App* s, bool needs_config) {
    auto* opt = s->add_option("--config", c.config, "Experiment config (JSON)");
    if (needs_config) opt->required()->check(CLI::ExistingFile);
    s->add_option("--preset", c.preset, "Preset applied on top of the config")->check(CLI::IsMember({"fast", "paper"}));
    s->add_option("--seed", c.seed, "Override the config seed");
    s->add_option("--out", c.out, "Output directory")->capture_default_str();
    s->add_option("--cache", c.cache, "Truth cache directory ('none' disables; default <out>/truth-cache)");
  };

  auto* gen = app.add_subcommand("generate", "Simulate the truth and write (y, Gamma)");
  add_common(gen, true);
  auto* inv = app.add_subcommand("invert", "Run standard or sparse EKI on one case");
  add_common(inv, true);
  inv->add_option("--mode", mode, "standard or sparse")->check(CLI::IsMember({"standard", "sparse"}))->capture_default_str();
  auto* cmp = app.add_subcommand("compare", "Run standard and sparse EKI on one case side by side");
  add_common(cmp, true);
  auto* all = app.add_subcommand("reproduce-all", "Run every shipped config in both modes");
  add_common(all, false);
  all->add_option("--configs", configs_dir, "Directory of configs")->check(CLI::ExistingDirectory)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    const fs::path out(c.out);
    if (*gen) {
      const auto cfg = read_config(c.config, c.preset, c.seed);
      auto cache = cache_dir(c);
      const TruthData td = generate_truth(cfg, cache);
      fs::create_directories(out);
      json j{{"case", cfg.case_id}, {"hash", td.hash}, {"y", td.y}, {"gamma", td.gamma}};
      std::ofstream(out / "data.json") << j.dump(1) << "\n";
      for (std::size_t i = 0; i < td.trajectories.size(); ++i)
        td.trajectories[i].write_csv((out / ("truth_" + std::to_string(i) + ".csv")).string());
      std::printf("%s: %zu data entries, hash %s%s\n", cfg.name.c_str(), td.y.size(), td.hash.c_str(),
                  td.from_cache ? " (cached)" : "");
    } else if (*inv) {
      const auto cfg = read_config(c.config, c.preset, c.seed);
      (void)invert(cfg, mode_from_string(mode), out, c);
    } else if (*cmp) {
      const auto cfg = read_config(c.config, c.preset, c.seed);
      const auto std_rep = invert(cfg, Mode::Standard, out / "standard", c);
      const auto sp_rep = invert(cfg, Mode::Sparse, out / "sparse", c);
      std::ofstream os(out / "comparison.csv");
      os << "name,truth,standard_mean,standard_std,sparse_mean,sparse_std,sparse_surviving\n";
      for (std::size_t i = 0; i < sp_rep.coefficients.size(); ++i) {
        const auto& a = std_rep.coefficients[i];
        const auto& b = sp_rep.coefficients[i];
        os << b.name << ',' << b.truth << ',' << a.mean << ',' << a.std << ',' << b.mean << ',' << b.std << ','
           << (b.surviving ? 1 : 0) << '\n';
      }
    } else if (*all) {
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(configs_dir))
        if (e.path().extension() == ".json") files.push_back(e.path());
      std::sort(files.begin(), files.end());
      json summary = json::array();
      for (const auto& f : files) {
        const auto cfg = read_config(f, c.preset, c.seed);
        for (Mode m : {Mode::Standard, Mode::Sparse}) {
          const auto rep = invert(cfg, m, out / f.stem() / to_string(m), c);
          summary.push_back({{"config", f.filename().string()}, {"mode", to_string(m)}, {"report", rep}});
        }
      }
      fs::create_directories(out);
      std::ofstream(out / "summary.json") << summary.dump(1) << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
