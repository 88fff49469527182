#include "cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <optional>
#include <sstream>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "fasm/errors.hpp"
#include "fasm/harness.hpp"
#include "fasm/observer.hpp"
#include "fasm/scenario.hpp"
#include "json.hpp"

namespace fasm::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

json matrix_json(const Eigen::MatrixXd& M) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < M.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < M.cols(); ++c) row.push_back(M(r, c));
    rows.push_back(row);
  }
  return rows;
}

std::vector<std::string> overrides_for(const std::vector<std::string>& sets, const std::string& mode,
                                       const std::optional<std::uint64_t>& seed) {
  std::vector<std::string> all = sets;
  if (!mode.empty()) all.push_back("controller.mode=" + mode);
  if (seed) all.push_back("seed=" + std::to_string(*seed));
  return all;
}

void write_run(const fs::path& dir, const harness::RunResult& r) {
  fs::create_directories(dir);
  std::ofstream csv(dir / "trajectory.csv");
  r.log.write_csv(csv);
  std::ofstream js(dir / "metrics.json");
  json m = r.metrics.to_json();
  m["name"] = r.name;
  m["mode"] = r.log.mode;
  js << m.dump(2) << '\n';
}

int exit_code(const std::vector<harness::RunResult>& runs) {
  const bool collided = std::any_of(runs.begin(), runs.end(), [](const auto& r) { return r.metrics.collision; });
  if (collided) return kExitCollision;
  const bool breakdown = std::any_of(runs.begin(), runs.end(), [](const auto& r) { return r.metrics.max_iter_steps > 0; });
  return breakdown ? kExitSolver : kExitOk;
}

bool strictly(const std::vector<std::optional<double>>& v, bool increasing) {
  if (v.size() < 2) return false;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (!v[i - 1] || !v[i]) return false;
    if (increasing ? !(*v[i] > *v[i - 1]) : !(*v[i] < *v[i - 1])) return false;
  }
  return true;
}

std::string last_segment(const std::string& key) {
  const auto dot = key.rfind('.');
  return dot == std::string::npos ? key : key.substr(dot + 1);
}

std::vector<std::string> split_values(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

void configure_logging() {
  auto logger = spdlog::stderr_color_mt("fasm");
  spdlog::set_default_logger(logger);
  const char* env = std::getenv("FASM_LOG_LEVEL");
  const std::string level = env ? env : "info";
  if (level == "error") {
    spdlog::set_level(spdlog::level::err);
  } else if (level == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else {
    spdlog::set_level(spdlog::level::info);
  }
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Flexible active safety motion control: simulator and tools"};
  app.require_subcommand(1);

  std::vector<std::string> scenarios;
  std::string out_dir = "out";
  std::vector<std::string> sets;
  std::string mode;
  std::optional<std::uint64_t> seed;
  bool timing = false;

  auto add_common = [&](CLI::App* sub, bool many) {
    if (many) {
      sub->add_option("--scenario", scenarios, "Scenario file (repeatable)")->required()->check(CLI::ExistingFile);
    } else {
      sub->add_option("--scenario", scenarios, "Scenario file")->required()->expected(1)->check(CLI::ExistingFile);
    }
    sub->add_option("--set", sets, "Override key=value (dotted keys, repeatable)");
    sub->add_option("--mode", mode, "Controller mode")->check(CLI::IsMember({"fasm", "baseline"}));
    sub->add_option("--seed", seed, "Random seed");
  };

  CLI::App* run_cmd = app.add_subcommand("run", "Run one scenario; writes trajectory.csv and metrics.json");
  add_common(run_cmd, false);
  run_cmd->add_option("--out", out_dir, "Output directory");
  run_cmd->add_flag("--timing", timing, "Record solver wall time in the log");

  CLI::App* compare_cmd = app.add_subcommand("compare", "Run several scenarios side by side");
  add_common(compare_cmd, true);
  compare_cmd->add_option("--out", out_dir, "Output directory");
  compare_cmd->add_flag("--timing", timing, "Record solver wall time in the logs");

  std::string key;
  std::string values;
  CLI::App* sweep_cmd = app.add_subcommand("sweep", "Sweep one scenario key over several values");
  add_common(sweep_cmd, false);
  sweep_cmd->add_option("--out", out_dir, "Output directory");
  sweep_cmd->add_option("--key", key, "Dotted key to sweep")->default_val("controller.P_gamma");
  sweep_cmd->add_option("--values", values, "Comma separated values")->required();

  CLI::App* validate_cmd = app.add_subcommand("validate", "Check a scenario file");
  add_common(validate_cmd, false);

  std::vector<double> alphas;
  double t_s = 0.04;
  double eta = 0.9999;
  double delta = 0.0;
  CLI::App* cert_cmd = app.add_subcommand("certificate", "Print the observer error certificate");
  cert_cmd->add_option("--scenario", scenarios, "Take the observer block from a scenario")->expected(1)->check(CLI::ExistingFile);
  cert_cmd->add_option("--set", sets, "Override key=value");
  cert_cmd->add_option("--alphas", alphas, "Observer gains")->delimiter(',');
  cert_cmd->add_option("--ts", t_s, "Sampling time in seconds");
  cert_cmd->add_option("--eta", eta, "Decay rate");
  cert_cmd->add_option("--delta", delta, "Bound on the initial estimation error");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  if (!rev.empty()) rev.pop_back();
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << '\n';
    return kExitConfig;
  }

  try {
    const auto overrides = overrides_for(sets, mode, seed);
    harness::RunOptions options;
    options.record_timing = timing;

    if (run_cmd->parsed()) {
      const auto cfg = scenario::load(scenarios.front(), overrides);
      const harness::RunResult r = harness::run_with_metrics(cfg, options);
      write_run(out_dir, r);
      json m = r.metrics.to_json();
      m["name"] = r.name;
      m["mode"] = r.log.mode;
      out << m.dump(2) << '\n';
      return exit_code({r});
    }

    if (compare_cmd->parsed()) {
      if (scenarios.size() < 2) throw ConfigError("compare needs at least two --scenario files");
      std::vector<scenario::ScenarioConfig> cfgs;
      for (const auto& s : scenarios) cfgs.push_back(scenario::load(s, overrides));
      const auto runs = harness::compare_runs(cfgs, options);
      for (std::size_t i = 0; i < runs.size(); ++i) {
        write_run(fs::path(out_dir) / (std::to_string(i) + "_" + runs[i].name), runs[i]);
      }
      const json table = harness::comparison_table(runs);
      fs::create_directories(out_dir);
      std::ofstream(fs::path(out_dir) / "comparison.json") << table.dump(2) << '\n';
      out << table.dump(2) << '\n';
      return exit_code(runs);
    }

    if (sweep_cmd->parsed()) {
      const auto vals = split_values(values);
      if (vals.empty()) throw ConfigError("sweep needs at least one value");
      std::vector<scenario::ScenarioConfig> cfgs;
      for (const auto& v : vals) {
        auto o = overrides;
        o.push_back(key + "=" + v);
        auto cfg = scenario::load(scenarios.front(), o);
        cfg.name += "_" + last_segment(key) + "_" + v;
        cfgs.push_back(std::move(cfg));
      }
      const auto runs = harness::compare_runs(cfgs, options);
      json rows = json::array();
      std::vector<std::optional<double>> trigger, activation, altitude, gamma;
      for (std::size_t i = 0; i < runs.size(); ++i) {
        write_run(fs::path(out_dir) / (last_segment(key) + "_" + vals[i]), runs[i]);
        json row = runs[i].metrics.to_json();
        row["value"] = json::parse(vals[i], nullptr, false);
        if (row["value"].is_discarded()) row["value"] = vals[i];
        rows.push_back(row);
        trigger.push_back(runs[i].metrics.trigger_moment);
        activation.push_back(runs[i].metrics.activation_moment);
        altitude.push_back(runs[i].metrics.highest_altitude);
        gamma.push_back(std::isfinite(runs[i].metrics.max_gamma) ? std::optional<double>(runs[i].metrics.max_gamma)
                                                                 : std::nullopt);
      }
      json summary;
      summary["key"] = key;
      summary["runs"] = rows;
      summary["trends"] = {{"trigger_moment_decreasing", strictly(trigger, false)},
                           {"activation_moment_decreasing", strictly(activation, false)},
                           {"highest_altitude_increasing", strictly(altitude, true)},
                           {"max_gamma_decreasing", strictly(gamma, false)}};
      fs::create_directories(out_dir);
      std::ofstream(fs::path(out_dir) / "summary.json") << summary.dump(2) << '\n';
      out << summary.dump(2) << '\n';
      return exit_code(runs);
    }

    if (validate_cmd->parsed()) {
      const auto cfg = scenario::load(scenarios.front(), overrides);
      json s;
      s["name"] = cfg.name;
      s["valid"] = true;
      s["dof"] = cfg.chain->dof();
      s["steps"] = cfg.num_steps();
      s["obstacles"] = cfg.obstacles.size();
      s["r_d"] = cfg.r_d();
      out << s.dump(2) << '\n';
      return kExitOk;
    }

    if (cert_cmd->parsed()) {
      observer::GpioConfig g;
      if (!scenarios.empty()) {
        g = scenario::load(scenarios.front(), sets).observer;
      } else {
        if (alphas.empty()) alphas = {5.0, 10.0, 2.0};
        g.m = static_cast<int>(alphas.size());
        g.alphas = Eigen::Map<const Eigen::VectorXd>(alphas.data(), static_cast<Eigen::Index>(alphas.size()));
        g.t_s = t_s;
        g.eta = eta;
        g.delta = delta;
      }
      observer::ErrorCertificate c;
      try {
        c = observer::lyapunov_certificate(observer::build_phi(g.alphas, g.t_s), g.eta);
      } catch (const std::exception& e) {
        throw ConfigError(std::string("certificate: ") + e.what());
      }
      json j;
      j["alphas"] = std::vector<double>(g.alphas.data(), g.alphas.data() + g.alphas.size());
      j["t_s"] = g.t_s;
      j["eta"] = g.eta;
      j["Phi"] = matrix_json(c.Phi);
      j["spectral_radius"] = observer::spectral_radius(c.Phi);
      j["W"] = matrix_json(c.W);
      j["c1"] = c.c1;
      j["c2"] = c.c2;
      j["phi0"] = c.phi0;
      j["delta"] = g.delta;
      j["r_d"] = g.delta * c.phi0;
      out << j.dump(2) << '\n';
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
  return kExitConfig;
}

}  // namespace fasm::cli
