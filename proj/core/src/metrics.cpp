#include "spfde/metrics.hpp"

#include "json.hpp"
#include "spfde/errors.hpp"

namespace spfde {

using nlohmann::json;

MetricsWriter::MetricsWriter(const std::string& path)
    : out_(path, std::ios::trunc) {
  if (!out_) throw DataError("metrics: cannot open '" + path + "' for write");
}

void MetricsWriter::write_config_echo(const std::string& config_json) {
  json j;
  j["type"] = "config";
  j["config"] = json::parse(config_json);
  out_ << j.dump() << "\n";
  out_.flush();
}

void MetricsWriter::write(const EpochRecord& rec) {
  json j;
  j["type"] = "epoch";
  j["epoch"] = rec.epoch;
  j["train_loss"] = rec.train_loss;
  j["train_acc"] = rec.train_acc;
  j["eval_acc"] = rec.eval_acc;
  j["lr_per_block"] = rec.lr_per_block;
  j["epoch_flops"] = rec.epoch_flops;
  j["cum_flops"] = rec.cum_flops;
  j["mem_bytes"] = rec.mem_bytes;
  j["frozen_blocks"] = rec.frozen_blocks;
  j["sieve_swaps"] = rec.sieve_swaps;
  j["sparsity_per_layer"] = rec.sparsity_per_layer;
  j["nnz_per_layer"] = rec.nnz_per_layer;
  out_ << j.dump() << "\n";
  out_.flush();
}

void MetricsWriter::write(const SieveReport& rep) {
  json j;
  j["type"] = "sieve";
  j["epoch"] = rep.epoch;
  j["swapped"] = rep.swapped;
  j["forget_min"] = rep.forget_min;
  j["forget_median"] = rep.forget_median;
  j["forget_max"] = rep.forget_max;
  j["drain_remaining"] = rep.drain_remaining;
  out_ << j.dump() << "\n";
  out_.flush();
}

void MetricsWriter::write(const SummaryRecord& sum) {
  json j;
  j["type"] = "summary";
  j["epochs"] = sum.epochs;
  j["flops_actual"] = sum.flops.actual;
  j["flops_dense_baseline"] = sum.flops.dense_baseline;
  j["flops_sparse_baseline"] = sum.flops.sparse_baseline;
  j["saved_sparsity"] = sum.flops.saved_sparsity;
  j["saved_sieving"] = sum.flops.saved_sieving;
  j["saved_freezing"] = sum.flops.saved_freezing;
  j["mem_min_bytes"] = sum.mem_min_bytes;
  j["mem_avg_bytes"] = sum.mem_avg_bytes;
  j["mem_baseline_bytes"] = sum.mem_baseline_bytes;
  j["final_train_acc"] = sum.final_train_acc;
  j["final_eval_acc"] = sum.final_eval_acc;
  out_ << j.dump() << "\n";
  out_.flush();
}

MetricsLog MetricsLog::read(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("metrics: cannot open '" + path + "'");
  MetricsLog log;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError("metrics: line " + std::to_string(lineno) +
                      " is not valid JSON: " + e.what());
    }
    try {
      const std::string type = j.at("type").get<std::string>();
      if (type == "config") {
        log.config_json = j.at("config").dump();
      } else if (type == "epoch") {
        EpochRecord r;
        r.epoch = j.at("epoch").get<int>();
        r.train_loss = j.at("train_loss").get<double>();
        r.train_acc = j.at("train_acc").get<double>();
        r.eval_acc = j.at("eval_acc").get<double>();
        r.lr_per_block = j.at("lr_per_block").get<std::vector<double>>();
        r.epoch_flops = j.at("epoch_flops").get<double>();
        r.cum_flops = j.at("cum_flops").get<double>();
        r.mem_bytes = j.at("mem_bytes").get<std::uint64_t>();
        r.frozen_blocks = j.at("frozen_blocks").get<std::size_t>();
        r.sieve_swaps = j.at("sieve_swaps").get<std::size_t>();
        r.sparsity_per_layer =
            j.at("sparsity_per_layer").get<std::vector<double>>();
        r.nnz_per_layer =
            j.at("nnz_per_layer").get<std::vector<std::uint64_t>>();
        log.epochs.push_back(std::move(r));
      } else if (type == "sieve") {
        SieveReport r;
        r.epoch = j.at("epoch").get<int>();
        r.swapped = j.at("swapped").get<std::size_t>();
        r.forget_min = j.at("forget_min").get<std::uint32_t>();
        r.forget_median = j.at("forget_median").get<std::uint32_t>();
        r.forget_max = j.at("forget_max").get<std::uint32_t>();
        r.drain_remaining = j.at("drain_remaining").get<std::size_t>();
        log.sieve_updates.push_back(r);
      } else if (type == "summary") {
        SummaryRecord s;
        s.epochs = j.at("epochs").get<int>();
        s.flops.actual = j.at("flops_actual").get<double>();
        s.flops.dense_baseline = j.at("flops_dense_baseline").get<double>();
        s.flops.sparse_baseline = j.at("flops_sparse_baseline").get<double>();
        s.flops.saved_sparsity = j.at("saved_sparsity").get<double>();
        s.flops.saved_sieving = j.at("saved_sieving").get<double>();
        s.flops.saved_freezing = j.at("saved_freezing").get<double>();
        s.mem_min_bytes = j.at("mem_min_bytes").get<std::uint64_t>();
        s.mem_avg_bytes = j.at("mem_avg_bytes").get<double>();
        s.mem_baseline_bytes = j.at("mem_baseline_bytes").get<std::uint64_t>();
        s.final_train_acc = j.at("final_train_acc").get<double>();
        s.final_eval_acc = j.at("final_eval_acc").get<double>();
        log.summary = s;
      } else {
        throw DataError("metrics: line " + std::to_string(lineno) +
                        " has unknown record type '" + type + "'");
      }
    } catch (const json::exception& e) {
      throw DataError("metrics: line " + std::to_string(lineno) +
                      " is malformed: " + e.what());
    }
  }
  return log;
}

}  // namespace spfde
