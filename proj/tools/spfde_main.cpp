// spfde - sparse training with progressive layer freezing and data sieving.
//
// Subcommands:
//   train   --config <path> --out <dir>
//   budget  --config <path> [--csv <path>]
//   analyze <structural|cka|gradnorm> --ref <ckpt> --trace <dir>
//           [--layer L] [--config <path>] [--out <csv>]
//   report  --metrics <path> [--csv <path>]
//
// Exit codes: 0 success, 2 config error, 3 data error, 4 planning error,
// 5 internal invariant violation.

#include <cstdio>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "spfde/config.hpp"
#include "spfde/errors.hpp"
#include "spfde/trace.hpp"
#include "spfde/trainer.hpp"

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw spfde::DataError("cannot open '" + path + "' for write");
  out << text;
}

void print_budget(const spfde::BudgetResult& res) {
  const spfde::FreezePlan& plan = res.plan;
  std::printf("freeze plan: scheme=%s T=%d T_frz=%d interval=%d blocks=%zu\n",
              spfde::to_string(plan.scheme).c_str(), plan.total_epochs,
              plan.start_epoch, plan.interval, plan.num_blocks);
  std::printf("samples/epoch: %zu\n", res.samples_per_epoch);
  std::printf("baseline training FLOPs:  %.6e\n", res.baseline_flops);
  std::printf("predicted training FLOPs: %.6e (%.2f%% saved)\n",
              plan.predicted_total_flops,
              100.0 * (res.baseline_flops - plan.predicted_total_flops) /
                  res.baseline_flops);
  std::printf("replayed  training FLOPs: %.6e\n", res.replayed_flops);
  if (plan.resume_epoch)
    std::printf("resume epoch: %d\n", *plan.resume_epoch);
  if (res.rows.empty()) {
    std::printf("no blocks freeze under this plan\n");
  } else {
    std::printf("%-6s %-13s %-16s %-14s %-14s\n", "block", "freeze_epoch",
                "bp_flops/epoch", "saved_flops", "cum_total");
    for (const auto& row : res.rows) {
      std::printf("%-6zu %-13d %-16.6e %-14.6e %-14.6e\n", row.block,
                  row.freeze_epoch, row.bp_flops_per_epoch, row.saved_flops,
                  row.cumulative_total);
    }
  }
}

std::string budget_csv(const spfde::BudgetResult& res) {
  std::ostringstream os;
  os << "block,freeze_epoch,bp_flops_per_epoch,saved_flops,cumulative_total\n";
  for (const auto& row : res.rows) {
    os << row.block << "," << row.freeze_epoch << "," << row.bp_flops_per_epoch
       << "," << row.saved_flops << "," << row.cumulative_total << "\n";
  }
  return os.str();
}

void print_report(const spfde::ReportResult& res) {
  const spfde::SummaryRecord& s = res.summary;
  std::printf("epochs: %d\n", s.epochs);
  std::printf("final train accuracy: %.4f\n", s.final_train_acc);
  std::printf("final eval accuracy:  %.4f\n", s.final_eval_acc);
  std::printf("training FLOPs:       %.6e\n", s.flops.actual);
  if (res.has_summary && s.flops.dense_baseline > 0) {
    std::printf("dense baseline FLOPs: %.6e\n", s.flops.dense_baseline);
    std::printf("sparse baseline FLOPs:%.6e\n", s.flops.sparse_baseline);
    const double total_saved = s.flops.dense_baseline - s.flops.actual;
    std::printf("savings vs dense:     %.6e (%.2f%%)\n", total_saved,
                100.0 * total_saved / s.flops.dense_baseline);
    std::printf("  from sparsity:      %.6e\n", s.flops.saved_sparsity);
    std::printf("  from sieving:       %.6e\n", s.flops.saved_sieving);
    std::printf("  from freezing:      %.6e\n", s.flops.saved_freezing);
    std::printf("memory min bytes:     %llu\n",
                static_cast<unsigned long long>(s.mem_min_bytes));
    std::printf("memory avg bytes:     %.1f\n", s.mem_avg_bytes);
    std::printf("memory baseline bytes:%llu\n",
                static_cast<unsigned long long>(s.mem_baseline_bytes));
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sparse training with layer freezing and data sieving"};
  app.require_subcommand(1);

  std::string config_path, out_dir, ref_path, trace_dir, metrics_path;
  std::string csv_path, layer_filter, analyze_kind;
  double top_fraction = 0.5;
  bool symmetric = false;

  auto* train = app.add_subcommand("train", "run the three-stage training flow");
  train->add_option("--config", config_path, "run config file")->required();
  train->add_option("--out", out_dir, "output directory")->required();

  auto* budget = app.add_subcommand("budget", "plan freezing without training");
  budget->add_option("--config", config_path, "run config file")->required();
  budget->add_option("--csv", csv_path, "write machine-readable rows here");

  auto* analyze =
      app.add_subcommand("analyze", "similarity / gradient traces over checkpoints");
  analyze->add_option("kind", analyze_kind, "structural | cka | gradnorm")
      ->required()
      ->check(CLI::IsMember({"structural", "cka", "gradnorm"}));
  analyze->add_option("--ref", ref_path, "reference checkpoint")->required();
  analyze->add_option("--trace", trace_dir, "checkpoint directory")->required();
  analyze->add_option("--layer", layer_filter, "restrict to one layer");
  analyze->add_option("--config", config_path,
                      "config supplying the dataset (default: from checkpoint)");
  analyze->add_option("--out", csv_path, "write CSV here (default: stdout)");
  analyze->add_option("--top-fraction", top_fraction,
                      "structural similarity top fraction");
  analyze->add_flag("--symmetric", symmetric,
                    "intersect with the reference's top fraction too");

  auto* report = app.add_subcommand("report", "summarize a metrics log");
  report->add_option("--metrics", metrics_path, "metrics.jsonl path")->required();
  report->add_option("--csv", csv_path, "write the per-epoch table here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train) {
      spfde::RunConfig cfg = spfde::RunConfig::from_file(config_path);
      spfde::TrainResult res = spfde::run_train(cfg, out_dir);
      std::printf("metrics: %s\n", res.metrics_path.c_str());
      std::printf("final checkpoint: %s\n", res.final_checkpoint.c_str());
      std::printf("final eval accuracy: %.4f\n", res.summary.final_eval_acc);
      std::printf("training FLOPs: %.6e (dense baseline %.6e)\n",
                  res.summary.flops.actual, res.summary.flops.dense_baseline);
    } else if (*budget) {
      spfde::RunConfig cfg = spfde::RunConfig::from_file(config_path);
      spfde::BudgetResult res = spfde::run_budget(cfg);
      print_budget(res);
      if (!csv_path.empty()) write_text(csv_path, budget_csv(res));
    } else if (*analyze) {
      spfde::TraceOptions opt;
      if (!layer_filter.empty()) opt.layer = layer_filter;
      if (!config_path.empty()) {
        spfde::RunConfig cfg = spfde::RunConfig::from_file(config_path);
        opt.dataset_spec =
            cfg.test_spec().empty() ? cfg.train_spec() : cfg.test_spec();
      }
      opt.top_fraction = top_fraction;
      opt.symmetric = symmetric;
      std::vector<spfde::TraceRow> rows;
      bool with_delta = false;
      if (analyze_kind == "structural") {
        rows = spfde::trace_structural(ref_path, trace_dir, opt);
      } else if (analyze_kind == "cka") {
        rows = spfde::trace_cka(ref_path, trace_dir, opt);
      } else {
        rows = spfde::trace_gradnorm(ref_path, trace_dir, opt);
        with_delta = true;
      }
      const std::string csv = spfde::trace_to_csv(rows, with_delta);
      if (csv_path.empty()) {
        std::fputs(csv.c_str(), stdout);
      } else {
        write_text(csv_path, csv);
      }
    } else if (*report) {
      spfde::ReportResult res = spfde::run_report(metrics_path);
      print_report(res);
      if (!csv_path.empty()) write_text(csv_path, res.csv);
    }
  } catch (const spfde::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const spfde::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const spfde::PlanningError& e) {
    std::fprintf(stderr, "planning error: %s\n", e.what());
    return 4;
  } catch (const spfde::InternalError& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 5;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 5;
  }
  return 0;
}
