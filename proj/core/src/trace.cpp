#include "spfde/trace.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <sstream>

#include "spfde/analysis.hpp"
#include "spfde/checkpoint.hpp"
#include "spfde/data.hpp"
#include "spfde/errors.hpp"

namespace spfde {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kEvalBatchSeed = 0xE7A1BA7C;

std::vector<std::string> checkpoint_files(const std::string& dir) {
  std::vector<std::string> files;
  if (!fs::is_directory(dir))
    throw DataError("trace: '" + dir + "' is not a directory");
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    if (entry.path().extension() == ".spfd" && name != "ckpt_final.spfd")
      files.push_back(entry.path().string());
  }
  std::sort(files.begin(), files.end());
  if (files.empty())
    throw DataError("trace: no .spfd checkpoints under '" + dir + "'");
  return files;
}

const std::string& pick_eval_spec(const CheckpointMeta& meta,
                                  const TraceOptions& opt) {
  if (opt.dataset_spec) return *opt.dataset_spec;
  if (!meta.eval_spec.empty()) return meta.eval_spec;
  if (!meta.dataset_spec.empty()) return meta.dataset_spec;
  throw DataError("trace: checkpoint carries no dataset spec; pass one");
}

}  // namespace

std::pair<Tensor, std::vector<std::int32_t>> trace_eval_batch(
    const std::string& dataset_spec, std::size_t n) {
  Dataset ds = load_dataset_spec(dataset_spec);
  const std::size_t take = std::min(n, ds.size());
  Rng rng(kEvalBatchSeed);
  auto picks = rng.sample_without_replacement(ds.size(), take);
  std::sort(picks.begin(), picks.end());

  const std::size_t elems = ds.channels() * ds.height() * ds.width();
  Tensor images = Tensor::zeros(
      {take, ds.channels(), ds.height(), ds.width()}, Precision::F32);
  std::vector<std::int32_t> labels(take);
  auto dst = images.data<float>();
  auto src = ds.images.data<float>();
  for (std::size_t i = 0; i < take; ++i) {
    std::copy_n(src.data() + picks[i] * elems, elems, dst.data() + i * elems);
    labels[i] = ds.labels[picks[i]];
  }
  return {std::move(images), std::move(labels)};
}

std::vector<TraceRow> trace_structural(const std::string& ref_checkpoint,
                                       const std::string& trace_dir,
                                       const TraceOptions& opt) {
  LoadedCheckpoint ref = load_checkpoint(ref_checkpoint);
  std::vector<TraceRow> rows;
  for (const std::string& file : checkpoint_files(trace_dir)) {
    LoadedCheckpoint ck = load_checkpoint(file);
    for (std::size_t li = 0; li < ck.net.layers().size(); ++li) {
      const MaskedLayer& layer = ck.net.layers()[li];
      if (opt.layer && layer.name != *opt.layer) continue;
      if (layer.target_sparsity <= 0.0) continue;  // dense layers are trivial
      rows.push_back({ck.meta.epoch, layer.name,
                      structural_similarity(layer, ref.net.layers()[li],
                                            opt.top_fraction, opt.symmetric),
                      0.0});
    }
  }
  return rows;
}

std::vector<TraceRow> trace_cka(const std::string& ref_checkpoint,
                                const std::string& trace_dir,
                                const TraceOptions& opt) {
  LoadedCheckpoint ref = load_checkpoint(ref_checkpoint);
  auto [images, labels] =
      trace_eval_batch(pick_eval_spec(ref.meta, opt), opt.eval_batch);
  (void)labels;

  std::vector<Tensor> ref_acts;
  ref.net.forward(images, &ref_acts);

  std::vector<std::string> names;
  for (const MaskedLayer& l : ref.net.layers()) names.push_back(l.name);

  std::vector<TraceRow> rows;
  for (const std::string& file : checkpoint_files(trace_dir)) {
    LoadedCheckpoint ck = load_checkpoint(file);
    std::vector<Tensor> acts;
    ck.net.forward(images, &acts);
    if (acts.size() != ref_acts.size())
      throw DataError("trace: checkpoint '" + file +
                      "' has a different architecture than the reference");
    for (std::size_t i = 0; i < acts.size(); ++i) {
      if (opt.layer && names[i] != *opt.layer) continue;
      rows.push_back(
          {ck.meta.epoch, names[i], linear_cka(acts[i], ref_acts[i]), 0.0});
    }
  }
  return rows;
}

std::vector<TraceRow> trace_gradnorm(const std::string& ref_checkpoint,
                                     const std::string& trace_dir,
                                     const TraceOptions& opt) {
  LoadedCheckpoint ref = load_checkpoint(ref_checkpoint);
  auto [images, labels] =
      trace_eval_batch(pick_eval_spec(ref.meta, opt), opt.eval_batch);

  std::vector<TraceRow> rows;
  std::map<std::string, double> prev;
  for (const std::string& file : checkpoint_files(trace_dir)) {
    LoadedCheckpoint ck = load_checkpoint(file);
    for (const GradNormEntry& e : gradient_norms(ck.net, images, labels)) {
      if (opt.layer && e.layer != *opt.layer) continue;
      double delta = 0.0;
      if (auto it = prev.find(e.layer); it != prev.end())
        delta = std::fabs(e.norm - it->second);
      prev[e.layer] = e.norm;
      rows.push_back({ck.meta.epoch, e.layer, e.norm, delta});
    }
  }
  return rows;
}

std::string trace_to_csv(const std::vector<TraceRow>& rows, bool with_delta) {
  std::ostringstream os;
  os << "epoch,layer,value";
  if (with_delta) os << ",delta";
  os << "\n";
  for (const TraceRow& r : rows) {
    os << r.epoch << "," << r.layer << "," << r.value;
    if (with_delta) os << "," << r.delta;
    os << "\n";
  }
  return os.str();
}

}  // namespace spfde
