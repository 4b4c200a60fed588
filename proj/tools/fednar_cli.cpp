// fednar: command-line front end for the federated weight-decay simulator.
//
//   fednar run --config <path> [--out <csv>]
//   fednar sweep --config <path> --param <key> --values <v1,v2,...> [--out-prefix <prefix>]
//   fednar check
//   fednar partition-stats --alpha <a> --clients <M> [--classes C] [--draws N] [--seed S]
//   fednar print-config [--config <path>]
//
// Exit codes: 0 success, 1 configuration or I/O error, 2 diagnostic failure.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "fednar/fednar.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitDiagnostic = 2;

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == ',') {
      out.push_back(fednar::detail::trim(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(fednar::detail::trim(cur));
  out.erase(std::remove(out.begin(), out.end(), std::string()), out.end());
  return out;
}

void print_summary(const std::vector<fednar::MetricsRow>& rows) {
  if (rows.empty()) return;
  const auto& last = rows.back();
  std::printf("round %zu: test_acc %.4f  test_loss %.4f  ||x|| %.4f  clips %zu\n", last.round, last.test_accuracy,
              last.test_loss, last.global_norm, last.clip_count);
}

int cmd_run(const std::string& config_path, const std::string& out) {
  const auto cfg = fednar::load_config(config_path);
  const auto result = fednar::run_experiment(cfg);
  if (out.empty()) {
    fednar::write_metrics_csv(result.rows, std::cout);
  } else {
    fednar::emit_metrics_csv(result.rows, out);
    print_summary(result.rows);
  }
  return kExitOk;
}

int cmd_sweep(const std::string& config_path, const std::string& param, const std::string& values,
              const std::string& prefix) {
  const auto base = fednar::load_config(config_path);
  const auto list = split_list(values);
  if (list.empty()) throw fednar::ConfigError("sweep: --values is empty");
  // Validate every point before running any of them.
  std::vector<fednar::ExperimentConfig> points;
  for (const auto& v : list) {
    auto cfg = base;
    fednar::set_config_value(cfg, param, v);
    cfg.validate();
    points.push_back(cfg);
  }
  for (std::size_t k = 0; k < points.size(); ++k) {
    const auto result = fednar::run_experiment(points[k]);
    const std::string path = prefix + "_" + param + "_" + list[k] + ".csv";
    fednar::emit_metrics_csv(result.rows, path);
    std::printf("%s = %s -> %s  ", param.c_str(), list[k].c_str(), path.c_str());
    print_summary(result.rows);
  }
  return kExitOk;
}

int cmd_check() {
  const auto outcomes = fednar::run_self_check();
  bool ok = true;
  for (const auto& o : outcomes) {
    std::printf("[%s] %s: %s\n", o.passed ? "PASS" : "FAIL", o.name.c_str(), o.detail.c_str());
    ok = ok && o.passed;
  }
  return ok ? kExitOk : kExitDiagnostic;
}

int cmd_partition_stats(double alpha, std::size_t clients, std::size_t classes, std::size_t draws,
                        std::uint64_t seed) {
  if (!(alpha > 0.0)) throw fednar::ConfigError("partition-stats: alpha must be positive");
  if (clients < 1 || classes < 2 || draws < 1) throw fednar::ConfigError("partition-stats: bad sizes");
  auto eng = fednar::RngStream(seed, {static_cast<std::uint64_t>(fednar::Purpose::kPartition)}).engine();
  std::vector<double> tv(draws);
  for (auto& v : tv) v = fednar::tv_to_uniform(fednar::sample_dirichlet(classes, alpha, eng));
  double mean = 0.0;
  for (double v : tv) mean += v;
  mean /= static_cast<double>(draws);
  std::sort(tv.begin(), tv.end());
  std::printf("dirichlet alpha=%g classes=%zu draws=%zu\n", alpha, classes, draws);
  std::printf("  TV(p, uniform): mean %.6f  median %.6f  min %.6f  max %.6f\n", mean, tv[draws / 2], tv.front(),
              tv.back());

  // One realised partition of a balanced dataset with `classes` x 100 samples.
  auto tt = fednar::make_blobs(classes, 100, 2, 1.0, 1.0, fednar::RngStream(seed));
  if (clients > tt.train.size()) throw fednar::ConfigError("partition-stats: too many clients");
  const auto part = fednar::dirichlet_partition(tt.train, clients, alpha, fednar::RngStream(seed).child(fednar::Purpose::kPartition));
  std::size_t lo = tt.train.size(), hi = 0;
  double realised_tv = 0.0;
  for (const auto& s : part.shards) {
    lo = std::min(lo, s.indices.size());
    hi = std::max(hi, s.indices.size());
    std::vector<double> hist(classes, 0.0);
    for (auto idx : s.indices) hist[static_cast<std::size_t>(tt.train.samples.labels[idx])] += 1.0;
    for (auto& h : hist) h /= static_cast<double>(s.indices.size());
    realised_tv += fednar::tv_to_uniform(hist);
  }
  std::printf("  partition of %zu samples over %zu clients: shard size %zu..%zu, mean realised TV %.6f\n",
              tt.train.size(), clients, lo, hi, realised_tv / static_cast<double>(clients));
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated optimization simulator with co-clipped weight decay"};
  app.require_subcommand(1);

  std::string config_path, out, param, values, prefix = "sweep";
  auto* run = app.add_subcommand("run", "Run one experiment and write its metrics CSV");
  run->add_option("--config", config_path, "Config file (key = value)")->required();
  run->add_option("--out", out, "Metrics CSV path (stdout when omitted)");

  auto* sweep = app.add_subcommand("sweep", "Run one experiment per value of a config key");
  sweep->add_option("--config", config_path, "Base config file")->required();
  sweep->add_option("--param", param, "Config key to vary")->required();
  sweep->add_option("--values", values, "Comma-separated values")->required();
  sweep->add_option("--out-prefix", prefix, "Output CSV prefix");

  auto* check = app.add_subcommand("check", "Run the built-in property suite");

  double alpha = 0.3;
  std::size_t clients = 100, classes = 10, draws = 1000;
  std::uint64_t seed = 0;
  auto* pstats = app.add_subcommand("partition-stats", "Dirichlet heterogeneity statistics");
  pstats->add_option("--alpha", alpha, "Dirichlet concentration")->required();
  pstats->add_option("--clients", clients, "Number of clients")->required();
  pstats->add_option("--classes", classes, "Number of classes");
  pstats->add_option("--draws", draws, "Monte-Carlo draws");
  pstats->add_option("--seed", seed, "Root seed");

  auto* print = app.add_subcommand("print-config", "Print every config key with its value");
  print->add_option("--config", config_path, "Config file to load (defaults when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*run) return cmd_run(config_path, out);
    if (*sweep) return cmd_sweep(config_path, param, values, prefix);
    if (*check) return cmd_check();
    if (*pstats) return cmd_partition_stats(alpha, clients, classes, draws, seed);
    if (*print) {
      const auto cfg = config_path.empty() ? fednar::ExperimentConfig{} : fednar::load_config(config_path);
      std::cout << fednar::format_config(cfg);
      return kExitOk;
    }
  } catch (const fednar::DiagnosticError& e) {
    std::cerr << "diagnostic failure: " << e.what() << '\n';
    return kExitDiagnostic;
  } catch (const fednar::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  }
  return kExitOk;
}
