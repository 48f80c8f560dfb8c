// Copyright (c) 2026 The MGLU Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// mglu: verification, benchmarks, toy training and cost tables.

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mglu/mglu.hpp"
#include "tools/cli/bench.hpp"
#include "tools/cli/json_io.hpp"
#include "tools/cli/verify.hpp"

namespace {

using mglu::cli::json;

constexpr int kExitFail = 1;
constexpr int kExitUsage = 2;

std::vector<std::size_t> parse_masks(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    mglu::require(used == item.size() && !item.empty(), mglu::Errc::invalid_argument,
                  "mask count '" + item + "' is not an integer");
    mglu::check_mask_count(v);
    out.push_back(v);
  }
  mglu::require(!out.empty(), mglu::Errc::invalid_argument, "no mask counts given");
  return out;
}

void emit_json(const json& j, const std::string& path) {
  if (path.empty()) return;
  if (path == "-") {
    std::cout << j.dump(2) << '\n';
    return;
  }
  std::ofstream f(path, std::ios::binary);
  mglu::require(static_cast<bool>(f), mglu::Errc::io_error, "cannot write " + path);
  f << j.dump(2) << '\n';
}

json envelope(const char* kind, json environment) {
  return {{"schema_version", mglu::cli::kSchemaVersion}, {"report", kind}, {"environment", std::move(environment)}};
}

json shapes_json(const std::vector<mglu::cli::Shape>& shapes) {
  json a = json::array();
  for (const auto& s : shapes) a.push_back({s.h, s.d});
  return a;
}

struct Common {
  std::string shapes;
  std::string masks;
  std::uint64_t seed = 1;
  std::size_t split_k = 1;
  std::string precision = "single";
  bool deterministic = false;
  unsigned threads = 0;
  std::string json_path;
};

void add_common(CLI::App* app, Common& c, const std::string& default_shapes, const std::string& default_masks) {
  c.shapes = default_shapes;
  c.masks = default_masks;
  app->add_option("--shapes", c.shapes, "Comma-separated HxD shapes")->capture_default_str();
  app->add_option("--masks", c.masks, "Comma-separated mask counts (1..16)")->capture_default_str();
  app->add_option("--seed", c.seed, "Base random seed")->capture_default_str();
  app->add_option("--split-k", c.split_k, "Split-K factor")->capture_default_str()->check(CLI::PositiveNumber);
  app->add_option("--precision", c.precision, "Arithmetic precision")
      ->capture_default_str()
      ->check(CLI::IsMember({"single", "double"}));
  app->add_flag("--deterministic", c.deterministic, "Ordered split-K reduction; reports omit timing fields");
  app->add_option("--threads", c.threads, "Kernel worker threads, 0 = all cores")->capture_default_str();
  app->add_option("--json", c.json_path, "Write the JSON report here ('-' for stdout)");
}

int cmd_verify(const Common& c, std::size_t seeds, const std::string& fault, bool gradients) {
  mglu::cli::VerifyOptions o;
  o.shapes = mglu::cli::parse_shapes(c.shapes);
  o.masks = parse_masks(c.masks);
  o.seed = c.seed;
  o.seeds = seeds;
  o.split_k = c.split_k;
  o.double_precision = c.precision == "double";
  o.deterministic = c.deterministic;
  o.threads = c.threads;
  o.gradients = gradients;
  o.fault = fault == "mask" ? mglu::cli::Fault::mask : fault == "grad" ? mglu::cli::Fault::grad : mglu::cli::Fault::none;

  const auto t0 = std::chrono::steady_clock::now();
  const auto rep = mglu::cli::run_verify(o);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  json j = envelope("verify", mglu::cli::environment(c.precision, c.threads, !c.deterministic));
  j["options"] = {{"shapes", shapes_json(o.shapes)}, {"masks", o.masks},       {"seed", o.seed},
                  {"seeds", o.seeds},                {"split_k", o.split_k},   {"deterministic", o.deterministic},
                  {"gradients", o.gradients},        {"inject_fault", fault}};
  j.update(mglu::cli::to_json(rep));
  if (!c.deterministic) j["wall_time_s"] = secs;
  emit_json(j, c.json_path);

  if (c.json_path != "-") {
    for (const auto& k : rep.cases)
      if (!k.pass)
        std::cout << "FAIL " << k.suite << " " << k.name << " metric=" << k.metric << " threshold=" << k.threshold
                  << (k.detail.empty() ? "" : " " + k.detail) << '\n';
    std::cout << rep.cases.size() - rep.failed() << "/" << rep.cases.size() << " verification cases passed\n";
  }
  return rep.pass() ? 0 : kExitFail;
}

int cmd_bench(const Common& c, std::size_t reps, std::size_t warmup, bool skip_naive, const std::string& csv) {
  mglu::cli::BenchOptions o;
  o.shapes = mglu::cli::parse_shapes(c.shapes);
  o.masks = parse_masks(c.masks);
  o.split_k = c.split_k;
  o.reps = reps;
  o.warmup = warmup;
  o.seed = c.seed;
  o.double_precision = c.precision == "double";
  o.deterministic = c.deterministic;
  o.threads = c.threads;
  o.include_naive = !skip_naive;
  const auto recs = mglu::cli::run_bench(o);

  json j = envelope("bench", mglu::cli::environment(c.precision, c.threads, true));
  j["options"] = {{"shapes", shapes_json(o.shapes)}, {"masks", o.masks},  {"split_k", o.split_k},
                  {"reps", o.reps},                  {"warmup", o.warmup}, {"deterministic", o.deterministic}};
  json cases = json::array();
  for (const auto& r : recs) cases.push_back(mglu::cli::to_json(r));
  j["cases"] = std::move(cases);
  j["scaling"] = mglu::cli::scaling_summary(recs, o.shapes);
  emit_json(j, c.json_path);

  if (!csv.empty()) {
    std::ofstream f(csv);
    mglu::require(static_cast<bool>(f), mglu::Errc::io_error, "cannot write " + csv);
    f << "kind,h,d,n_m,split_k,reps,warmup_reps,median_ms,p10_ms,p90_ms\n";
    for (const auto& r : recs)
      f << mglu::cli::to_string(r.kind) << ',' << r.h << ',' << r.d << ',' << r.n_m << ',' << r.split_k << ','
        << r.reps << ',' << r.warmup_reps << ',' << r.median_ms << ',' << r.p10_ms << ',' << r.p90_ms << '\n';
  }
  if (c.json_path != "-") {
    std::cout << std::left << std::setw(14) << "kind" << std::right << std::setw(12) << "shape" << std::setw(5)
              << "n_m" << std::setw(12) << "median_ms" << std::setw(10) << "p10_ms" << std::setw(10) << "p90_ms"
              << '\n';
    for (const auto& r : recs)
      std::cout << std::left << std::setw(14) << mglu::cli::to_string(r.kind) << std::right << std::setw(12)
                << (std::to_string(r.h) + "x" + std::to_string(r.d)) << std::setw(5) << r.n_m << std::fixed
                << std::setprecision(3) << std::setw(12) << r.median_ms << std::setw(10) << r.p10_ms
                << std::setw(10) << r.p90_ms << '\n';
    std::cout << j["scaling"].dump() << '\n';
  }
  return 0;
}

void write_curve_csv(const std::string& path, const mglu::TrainReport& r, std::size_t n_m) {
  std::ofstream f(path);
  mglu::require(static_cast<bool>(f), mglu::Errc::io_error, "cannot write " + path);
  f << "step,loss";
  for (std::size_t i = 1; i <= n_m; ++i) f << ",gate_ratio_" << i;
  f << '\n' << std::setprecision(17);
  for (std::size_t k = 0; k < r.steps.size(); ++k) {
    f << r.steps[k] << ',' << r.loss_curve[k];
    for (std::size_t i = 0; i < n_m; ++i) f << ',' << (i < r.mask_stats[k].size() ? r.mask_stats[k][i] : 0.0);
    f << '\n';
  }
}

int cmd_train(const std::string& config_path, const std::string& json_path, const std::string& csv_path,
              bool compare_masks, bool deterministic) {
  std::ifstream in(config_path);
  if (!in) {
    std::cerr << "error: cannot read config " << config_path << '\n';
    return kExitUsage;
  }
  mglu::TrainConfig cfg;
  try {
    const json doc = json::parse(in);
    cfg = mglu::cli::parse_train_config(doc);
  } catch (const json::parse_error& e) {
    std::cerr << "config error at /: malformed JSON (" << e.what() << ")\n";
    return kExitUsage;
  } catch (const mglu::cli::ConfigError& e) {
    std::cerr << "config error at " << e.what() << '\n';
    return kExitUsage;
  }

  const auto task = mglu::make_task_for(cfg);
  const auto result = mglu::train_on(cfg, task);
  const bool is_glu = cfg.variant.kind == mglu::VariantKind::glu;

  json j = envelope("train", mglu::cli::environment("double", 1, !deterministic));
  j["config"] = mglu::cli::to_json(cfg);
  j["result"] = mglu::cli::to_json(result.report, !deterministic);
  bool ok = !result.report.diverged;
  if (compare_masks && !is_glu) {
    auto other = cfg;
    other.mask_mode = cfg.mask_mode == mglu::MaskMode::learned ? mglu::MaskMode::fixed : mglu::MaskMode::learned;
    const auto paired = mglu::train_on(other, task);
    const auto& learned = cfg.mask_mode == mglu::MaskMode::learned ? result.report : paired.report;
    const auto& fixed = cfg.mask_mode == mglu::MaskMode::learned ? paired.report : result.report;
    j["paired_result"] = mglu::cli::to_json(paired.report, !deterministic);
    j["comparison"] = {{"learned_final_loss", mglu::cli::number_or_null(learned.final_loss)},
                       {"fixed_final_loss", mglu::cli::number_or_null(fixed.final_loss)},
                       {"learned_lower", learned.final_loss < fixed.final_loss}};
    ok = ok && !paired.report.diverged;
  }
  emit_json(j, json_path);
  if (!csv_path.empty()) write_curve_csv(csv_path, result.report, is_glu ? 0 : cfg.n_m);
  if (json_path != "-") {
    std::cout << "final_loss " << std::setprecision(6) << result.report.final_loss << " after "
              << (result.report.steps.empty() ? 0 : result.report.steps.back()) << " steps";
    if (result.report.diverged) std::cout << " (" << result.report.error << ")";
    std::cout << '\n';
    if (j.contains("comparison")) std::cout << "comparison " << j["comparison"].dump() << '\n';
  }
  return ok ? 0 : kExitFail;
}

int cmd_analyze(const std::string& shapes_text, const std::string& masks_text, const std::string& json_path) {
  const auto shapes = mglu::cli::parse_shapes(shapes_text);
  const auto masks = parse_masks(masks_text);
  std::vector<std::uint64_t> counts(masks.begin(), masks.end());
  json rows = json::array();
  json footnotes = json::array();
  std::ostringstream text;
  for (const auto& s : shapes) {
    const auto table = mglu::analysis::cost_table(s.h, s.d, counts);
    for (const auto& r : table) rows.push_back(mglu::cli::to_json(r));
    text << mglu::analysis::format_cost_table(table) << '\n';
    // FFN weights at 2 bytes per value and one bit per mask entry, n_m = 1.
    const auto glu = mglu::analysis::param_counts(mglu::analysis::LayerKind::glu, s.h, s.d, std::nullopt, true);
    const auto mg = mglu::analysis::param_counts(mglu::analysis::LayerKind::mglu, s.h, s.d, 1, true);
    footnotes.push_back({{"h", s.h},
                         {"d", s.d},
                         {"glu_ffn_bytes", glu.fp16_params * 2},
                         {"mglu_ffn_bytes", mg.fp16_params * 2},
                         {"mask_bytes_per_mask", mg.mask_bits / 8}});
  }
  json j = envelope("analyze", {{"precision", "fp16-model"}});
  j["rows"] = std::move(rows);
  j["ffn_bytes"] = std::move(footnotes);
  emit_json(j, json_path);
  if (json_path != "-") std::cout << text.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Masked gated linear units: verify, bench, train, analyze"};
  app.require_subcommand(1);

  Common vc;
  std::size_t seeds = 1;
  std::string fault = "none";
  bool no_grad = false;
  auto* verify = app.add_subcommand("verify", "Run the equivalence and gradient suites");
  add_common(verify, vc, "8x16,64x256,768x3072", "1,2,4,8,16");
  vc.split_k = 4;
  verify->add_option("--seeds", seeds, "Number of seeds starting at --seed")->capture_default_str();
  verify->add_option("--inject-fault", fault, "Test hook: corrupt a mask bit or a gradient")
      ->check(CLI::IsMember({"none", "mask", "grad"}))
      ->group("Testing");
  verify->add_flag("--no-gradients", no_grad, "Skip the gradient checks");

  Common bc;
  std::size_t reps = 10, warmup = 2;
  bool skip_naive = false;
  std::string bench_csv;
  auto* bench = app.add_subcommand("bench", "Time naive, fused and GLU forward passes");
  add_common(bench, bc, "2048x8192", "1,2,4,8");
  bench->add_option("--reps", reps, "Timed repetitions")->capture_default_str()->check(CLI::PositiveNumber);
  bench->add_option("--warmup", warmup, "Untimed warmup repetitions")->capture_default_str();
  bench->add_option("--csv", bench_csv, "Write per-case rows as CSV");
  bench->add_flag("--skip-naive", skip_naive, "Only time the fused and GLU paths");

  std::string config_path, train_json, train_csv;
  bool compare = false, train_det = false;
  auto* train = app.add_subcommand("train", "Train a toy layer from a JSON config");
  train->add_option("config", config_path, "Training config (JSON)")->required();
  train->add_option("--json", train_json, "Write the JSON report here ('-' for stdout)");
  train->add_option("--csv", train_csv, "Write the loss curve as CSV");
  train->add_flag("--compare-masks", compare, "Also run the opposite mask mode and compare");
  train->add_flag("--deterministic", train_det, "Omit timing fields from the report");

  std::string an_shapes = "2048x8192", an_masks = "1,2,4,8,16", an_json;
  auto* analyze = app.add_subcommand("analyze", "Memory, parameter and FLOP tables");
  analyze->add_option("--shapes", an_shapes, "Comma-separated HxD shapes")->capture_default_str();
  analyze->add_option("--masks", an_masks, "Comma-separated mask counts")->capture_default_str();
  analyze->add_option("--json", an_json, "Write the JSON report here ('-' for stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitUsage;
  }

  try {
    if (*verify) return cmd_verify(vc, seeds, fault, !no_grad);
    if (*bench) return cmd_bench(bc, reps, warmup, skip_naive, bench_csv);
    if (*train) return cmd_train(config_path, train_json, train_csv, compare, train_det);
    if (*analyze) return cmd_analyze(an_shapes, an_masks, an_json);
  } catch (const mglu::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.code() == mglu::Errc::invalid_argument || e.code() == mglu::Errc::out_of_range ? kExitUsage
                                                                                             : kExitFail;
  }
  return kExitUsage;
}
