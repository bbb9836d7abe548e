#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dgattn/bench_report.hpp"
#include "dgattn/complexity.hpp"
#include "dgattn/io.hpp"
#include "dgattn/model.hpp"
#include "dgattn/parallel.hpp"
#include "dgattn/toy_train.hpp"
#include "dgattn/verify.hpp"
#include "dgattn/viz.hpp"
#include "json.hpp"

using namespace dgattn;

namespace {

constexpr int kOk = 0;
constexpr int kVerifyFailed = 1;
constexpr int kUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void write_binary(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-")
    std::cout << text;
  else
    write_text_file(path, text);
}

struct CheckArgs {
  std::uint64_t seed = 0;
  std::string sabotage = "none";
};

int cmd_check(const CheckArgs& a) {
  const auto suites = run_check_suites(a.seed, parse_sabotage(a.sabotage));
  int rc = kOk;
  for (const auto& s : suites) {
    std::printf("%-17s cases=%-3zu max_error=%.3e tol=%.0e %s\n", s.name.c_str(), s.cases,
                s.max_error, s.tolerance, s.passed() ? "ok" : "FAILED");
    if (!s.passed()) {
      std::printf("  failing property: %s\n", s.failing.c_str());
      rc = kVerifyFailed;
    }
  }
  return rc;
}

struct GradcheckArgs {
  GradcheckOptions opts;
  double tol = 1e-5;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  const GradcheckReport r = run_gradcheck(a.opts);
  if (!r.screened) {
    std::printf("no instance passed the routing-margin screen in %zu attempts\n", r.attempts);
    return kVerifyFailed;
  }
  std::printf("seed=%llu attempts=%zu margin=%.3e collision=%s\n",
              static_cast<unsigned long long>(r.seed_used), r.attempts, r.margin,
              r.collision ? "yes" : "no");
  std::printf("dX_Q max_rel=%.3e\ndX_K max_rel=%.3e\ndX_V max_rel=%.3e\n", r.rel_dq, r.rel_dk,
              r.rel_dv);
  if (a.opts.compare_dense)
    std::printf("dense oracle: dX_Q %.3e dX_K %.3e dX_V %.3e\n", r.dense_rel_dq, r.dense_rel_dk,
                r.dense_rel_dv);
  const bool ok = r.max_error() <= a.tol;
  std::printf("%s (tol %.0e)\n", ok ? "ok" : "FAILED", a.tol);
  return ok ? kOk : kVerifyFailed;
}

struct ComplexityArgs {
  std::string variant;
  std::size_t L = 0, C = 0, G = 48, k = 98;
  std::string log_base = "e";
  std::string format = "table";
  std::string out;
};

nlohmann::json report_json(const ComplexityReport& r) {
  return {{"L", r.L},
          {"C", r.C},
          {"G", r.G},
          {"k", r.k},
          {"omega_global", r.omega_global},
          {"attend", r.attend_term},
          {"grouping", r.grouping_term},
          {"topk", r.topk_term},
          {"omega_dg", r.omega_dg},
          {"ratio", r.ratio}};
}

int cmd_complexity(const ComplexityArgs& a) {
  const LogBase base = parse_log_base(a.log_base);
  nlohmann::json rows = nlohmann::json::array();
  if (!a.variant.empty()) {
    const DgtVariantConfig cfg = DgtVariantConfig::named(a.variant);
    const auto shapes = stage_shapes(cfg, 224, 224);
    for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
      const StageConfig& st = cfg.stages[s];
      nlohmann::json row;
      if (st.global_attention) {
        row = {{"L", shapes[s].tokens}, {"C", st.channels},
               {"omega_global", omega_global(shapes[s].tokens, st.channels)}, {"ratio", 1.0}};
      } else {
        row = report_json(complexity(shapes[s].tokens, st.channels, st.groups, st.top_k, base));
      }
      row["stage"] = s + 1;
      row["attention"] = st.global_attention ? "global" : "dg";
      rows.push_back(row);
    }
  } else {
    if (a.L == 0 || a.C == 0) throw UsageError("complexity needs --variant or both --L and --C");
    rows.push_back(report_json(complexity(a.L, a.C, a.G, a.k, base)));
  }

  if (a.format == "json") {
    nlohmann::json doc{{"log_base", log_base_name(base)}, {"rows", rows}};
    if (!a.variant.empty()) doc["variant"] = a.variant;
    emit(a.out, doc.dump(2) + "\n");
    return kOk;
  }
  std::ostringstream os;
  os << "stage      L     C   G    k     omega_global         omega_dg   ratio\n";
  for (const auto& r : rows) {
    char line[160];
    const bool dg = !r.contains("attention") || r["attention"] == "dg";
    std::snprintf(line, sizeof line, "%5s %6zu %5zu %3s %4s %16llu %16s %7.4f\n",
                  r.contains("stage") ? std::to_string(r["stage"].get<int>()).c_str() : "-",
                  r["L"].get<std::size_t>(), r["C"].get<std::size_t>(),
                  dg ? std::to_string(r["G"].get<std::size_t>()).c_str() : "-",
                  dg ? std::to_string(r["k"].get<std::size_t>()).c_str() : "-",
                  static_cast<unsigned long long>(r["omega_global"].get<std::uint64_t>()),
                  dg ? std::to_string(static_cast<long long>(r["omega_dg"].get<double>())).c_str()
                     : "-",
                  r["ratio"].get<double>());
    os << line;
  }
  emit(a.out, os.str());
  return kOk;
}

struct VizArgs {
  VizOptions opts;
  std::string input;
  std::string out = "viz";
};

int cmd_viz(const VizArgs& a) {
  Tensor grid;
  if (a.input.empty()) {
    Rng rng(a.opts.seed);
    grid = two_blob_grid(a.opts.height, a.opts.width, a.opts.dim, rng);
  } else {
    grid = tensor_from_json(read_text_file(a.input));
  }
  const VizResult r = run_viz(grid, a.opts);
  write_binary(a.out + "_groups.pgm", group_map_pgm(r.group_of, r.height, r.width, a.opts.groups));
  write_text_file(a.out + "_selection.json", selection_to_json(r.selection) + "\n");
  std::printf("wrote %s_groups.pgm (%zux%zu, G=%zu) and %s_selection.json\n", a.out.c_str(),
              r.width, r.height, a.opts.groups, a.out.c_str());
  return kOk;
}

struct ToyArgs {
  ToyTrainOptions opts;
  std::string out;
};

int cmd_toy_train(const ToyArgs& a) {
  const ToyTrainResult r = run_toy_train(a.opts);
  emit(a.out, r.csv());
  if (r.diverged) {
    std::fprintf(stderr, "loss diverged at step %zu\n", r.loss.size() - 1);
    return kVerifyFailed;
  }
  return kOk;
}

struct BenchArgs {
  BenchOptions opts;
  std::vector<std::string> modes = {"split", "masked"};
  std::string format = "json";
  std::string out;
};

int cmd_bench(BenchArgs a) {
  a.opts.modes.clear();
  for (const auto& m : a.modes) a.opts.modes.push_back(parse_tile_mode(m));
  const auto rows = run_bench(a.opts);
  emit(a.out, a.format == "csv" ? bench_csv(rows) : bench_json(rows) + "\n");
  for (const auto& r : rows)
    if (r.counters.tiles != r.analytic_tiles) {
      std::fprintf(stderr, "tile count %llu differs from plan %llu at T=%zu\n",
                   static_cast<unsigned long long>(r.counters.tiles),
                   static_cast<unsigned long long>(r.analytic_tiles), r.tile);
      return kVerifyFailed;
    }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  parallel::configure_from_env();
  CLI::App app{"Dynamic Group Attention toolkit"};
  app.require_subcommand(1);

  CheckArgs check;
  auto* c = app.add_subcommand("check", "Run the oracle-equivalence suites");
  c->add_option("--seed", check.seed, "Random seed");
  c->add_option("--sabotage", check.sabotage, "Corrupt one tiled form (form1..form4)");

  GradcheckArgs grad;
  auto* g = app.add_subcommand("gradcheck", "Finite-difference check of the backward pass");
  g->add_option("--L", grad.opts.tokens, "Tokens");
  g->add_option("--C", grad.opts.head_dim, "Head dimension");
  g->add_option("--G", grad.opts.groups, "Groups");
  g->add_option("--k", grad.opts.top_k, "Selected keys per group");
  g->add_option("--H", grad.opts.heads, "Heads");
  g->add_option("--T", grad.opts.tile, "Tile size");
  g->add_option("--seed", grad.opts.seed, "Random seed");
  g->add_option("--step", grad.opts.step, "Finite-difference step");
  g->add_option("--tol", grad.tol, "Max relative error allowed");
  g->add_option("--retries", grad.opts.max_retries, "Margin-screen attempts");
  g->add_flag("--zero-dy", grad.opts.zero_output_grad, "Use a zero output gradient");
  g->add_flag("--collision", grad.opts.require_collision, "Require two groups to share a key");
  g->add_flag("--dense", grad.opts.compare_dense, "Also difference the dense oracle");

  ComplexityArgs cx;
  auto* x = app.add_subcommand("complexity", "Attention op counts for a variant or tuple");
  x->add_option("--variant", cx.variant, "T, S or B");
  x->add_option("--L", cx.L, "Tokens");
  x->add_option("--C", cx.C, "Channels");
  x->add_option("--G", cx.G, "Groups");
  x->add_option("--k", cx.k, "Selected keys per group");
  x->add_option("--log-base", cx.log_base, "Log base of the sorting term (e, 2, 10)");
  x->add_option("--format", cx.format, "table or json")->check(CLI::IsMember({"table", "json"}));
  x->add_option("--out", cx.out, "Output file (default stdout)");

  VizArgs viz;
  auto* v = app.add_subcommand("viz", "Group map (PGM) and key selection (JSON) for one forward");
  v->add_option("--input", viz.input, "H x W x C grid as Tensor JSON (default: synthetic blobs)");
  v->add_option("--H", viz.opts.height, "Synthetic grid height");
  v->add_option("--W", viz.opts.width, "Synthetic grid width");
  v->add_option("--C", viz.opts.dim, "Synthetic channels");
  v->add_option("--G", viz.opts.groups, "Groups");
  v->add_option("--k", viz.opts.top_k, "Selected keys per group");
  v->add_option("--iters", viz.opts.bootstrap_iters, "k-means bootstrap iterations");
  v->add_option("--seed", viz.opts.seed, "Random seed");
  v->add_option("--out", viz.out, "Output prefix");

  ToyArgs toy;
  auto* t = app.add_subcommand("toy-train", "Train a two-block DGT on synthetic data");
  t->add_option("--steps", toy.opts.steps, "Gradient steps");
  t->add_option("--seed", toy.opts.seed, "Random seed");
  t->add_option("--lr", toy.opts.learning_rate, "Learning rate");
  t->add_option("--out", toy.out, "CSV output (default stdout)");

  BenchArgs bench;
  auto* b = app.add_subcommand("bench", "Tiled vs reference grouped matmul");
  b->add_option("--L", bench.opts.tokens, "Tokens");
  b->add_option("--C", bench.opts.dim, "Channels");
  b->add_option("--G", bench.opts.groups, "Groups");
  b->add_option("--k", bench.opts.top_k, "Selected keys per group");
  b->add_option("--tiles", bench.opts.tiles, "Tile sizes")->delimiter(',');
  b->add_option("--modes", bench.modes, "split and/or masked")->delimiter(',');
  b->add_option("--sizes", bench.opts.group_sizes, "Explicit group sizes")->delimiter(',');
  b->add_option("--repeats", bench.opts.repeats, "Timing repeats");
  b->add_option("--seed", bench.opts.seed, "Random seed");
  b->add_option("--format", bench.format, "json or csv")->check(CLI::IsMember({"json", "csv"}));
  b->add_option("--out", bench.out, "Output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*c) return cmd_check(check);
    if (*g) return cmd_gradcheck(grad);
    if (*x) return cmd_complexity(cx);
    if (*v) return cmd_viz(viz);
    if (*t) return cmd_toy_train(toy);
    if (*b) return cmd_bench(bench);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  }
  return kUsage;
}
